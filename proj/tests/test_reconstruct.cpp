#include <trajgmm/reconstruct.hpp>

#include <catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <random>

using Catch::Approx;
using namespace trajgmm;
using namespace trajgmm::reconstruct;

namespace {

// Dense operators written out from the stencil definitions, independent of
// the library's band assembly.
Eigen::MatrixXd dense_d2(int n) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n - 2, n);
  for (int i = 0; i < n - 2; ++i) {
    d(i, i) = 1.0;
    d(i, i + 1) = -2.0;
    d(i, i + 2) = 1.0;
  }
  return d;
}

Eigen::MatrixXd dense_d3(int n) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n - 4, n);
  for (int i = 0; i < n - 4; ++i) {
    d(i, i) = -1.0;
    d(i, i + 1) = 2.0;
    d(i, i + 3) = -2.0;
    d(i, i + 4) = 1.0;
  }
  return d;
}

// Minimizer via QR of the stacked system [A; sqrt(l1) D2; sqrt(l2) D3].
Eigen::MatrixXd dense_oracle(const ReconstructionProblem& prob) {
  const int n = static_cast<int>(prob.n);
  const Eigen::MatrixXd d2 = dense_d2(n), d3 = dense_d3(n);
  Eigen::MatrixXd stacked(n + d2.rows() + d3.rows(), n);
  stacked << Eigen::MatrixXd(prob.mask.asDiagonal()), std::sqrt(prob.lambda.lambda1) * d2,
      std::sqrt(prob.lambda.lambda2) * d3;
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(stacked.rows(), 3);
  rhs.topRows(n) = prob.targets;
  return stacked.colPivHouseholderQr().solve(rhs);
}

ReconstructionProblem random_problem(std::mt19937_64& rng, int n, double fraction, Regularization lambda) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 50.0);
  ReconstructionProblem prob{static_cast<std::size_t>(n), Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, 3), lambda};
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const int measured = std::max(4, static_cast<int>(std::lround(fraction * n)));
  for (int k = 0; k < measured; ++k) {
    const int i = idx[k];
    prob.mask(i) = 1.0;
    prob.targets.row(i) << 80.0 * i + g(rng), -30.0 * i + 0.2 * i * i + g(rng), 100.0 + 40.0 * i + g(rng);
  }
  return prob;
}

ingest::RawTrack track_from(const Eigen::MatrixXd& positions, const std::vector<int>& seconds) {
  ingest::RawTrack t;
  for (int s : seconds) t.measurements.push_back({static_cast<double>(s), geo::EnuPosition::from(positions.row(s).transpose())});
  return t;
}

// Least-squares fit of each column on the measured rows onto the given basis.
Eigen::MatrixXd basis_fit(const ReconstructionProblem& prob, const Eigen::MatrixXd& basis) {
  std::vector<int> rows;
  for (int i = 0; i < prob.mask.size(); ++i)
    if (prob.mask(i) > 0.0) rows.push_back(i);
  Eigen::MatrixXd b(rows.size(), basis.cols()), y(rows.size(), 3);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    b.row(k) = basis.row(rows[k]);
    y.row(k) = prob.targets.row(rows[k]);
  }
  return basis * b.colPivHouseholderQr().solve(y);
}

Eigen::MatrixXd poly_basis(int n, int degree, bool alternating = false) {
  Eigen::MatrixXd b(n, degree + 1 + (alternating ? 1 : 0));
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d <= degree; ++d) b(i, d) = std::pow(static_cast<double>(i) / n, d);
    if (alternating) b(i, degree + 1) = i % 2 == 0 ? 1.0 : -1.0;
  }
  return b;
}

}  // namespace

TEST_CASE("difference operators on the reference sequences", "[reconstruct][ops]") {
  const auto ops = build_difference_operators(5);
  CHECK(ops.d2.rows == 3);
  CHECK(ops.d3.rows == 1);
  Eigen::VectorXd squares(5);
  squares << 0, 1, 4, 9, 16;
  const Eigen::MatrixXd d2sq = ops.d2.apply(squares);
  CHECK(d2sq(0, 0) == 2.0);
  CHECK(d2sq(1, 0) == 2.0);
  CHECK(d2sq(2, 0) == 2.0);

  Eigen::VectorXd affine(6);
  affine << 3, 5, 7, 9, 11, 13;
  const auto ops6 = build_difference_operators(6);
  CHECK(ops6.d2.apply(affine).cwiseAbs().maxCoeff() == 0.0);

  CHECK((ops6.d2.dense() - dense_d2(6)).norm() == 0.0);
  CHECK((ops6.d3.dense() - dense_d3(6)).norm() == 0.0);
  CHECK_THROWS_AS(build_difference_operators(4), InvalidArgument);
}

TEST_CASE("D2 annihilates affine and D3 annihilates quadratic sequences exactly", "[reconstruct][ops]") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> c(-1000, 1000);
  for (int n : {5, 6, 17, 200}) {
    const auto ops = build_difference_operators(static_cast<std::size_t>(n));
    for (int rep = 0; rep < 20; ++rep) {
      const double a = c(rng), b = c(rng), q = c(rng);
      Eigen::VectorXd lin(n), quad(n);
      for (int i = 0; i < n; ++i) {
        lin(i) = a + b * i;
        quad(i) = a + b * i + q * i * i;
      }
      CHECK(ops.d2.apply(lin).cwiseAbs().maxCoeff() == 0.0);
      CHECK(ops.d3.apply(quad).cwiseAbs().maxCoeff() == 0.0);
    }
    // The jerk stencil also removes the alternating sequence.
    Eigen::VectorXd alt(n);
    for (int i = 0; i < n; ++i) alt(i) = i % 2 == 0 ? 1.0 : -1.0;
    CHECK(ops.d3.apply(alt).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("build_targets averages within a second and truncates", "[reconstruct][targets]") {
  ingest::RawTrack t;
  t.measurements = {{0.0, {0, 0, 0}}, {2.1, {5, 5, 5}}, {6.8, {1, 2, 3}}, {7.2, {3, 4, 5}}, {12.0, {9, 9, 9}}};
  const auto [mask, targets] = build_targets(t, 10);
  CHECK(mask(7) == 1.0);
  CHECK(targets(7, 0) == 2.0);
  CHECK(targets(7, 1) == 3.0);
  CHECK(targets(7, 2) == 4.0);
  CHECK(mask(4) == 0.0);
  CHECK(targets.row(4).norm() == 0.0);
  CHECK(mask(2) == 1.0);
  CHECK(mask.sum() == 3.0);
}

TEST_CASE("full measurement without penalties interpolates exactly", "[reconstruct][solve]") {
  std::mt19937_64 rng(4);
  auto prob = random_problem(rng, 40, 1.0, {0.0, 0.0});
  REQUIRE(prob.measured_count() == 40);
  const Eigen::MatrixXd p = solve_reconstruction(prob);
  CHECK((p - prob.targets).norm() == 0.0);
}

TEST_CASE("banded solver matches the dense least-squares oracle", "[reconstruct][solve]") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> size(5, 200);
  std::uniform_real_distribution<double> frac(0.3, 0.9);
  std::uniform_int_distribution<int> exponent(-2, 6);
  for (int rep = 0; rep < 50; ++rep) {
    const Regularization lambda{std::pow(10.0, exponent(rng)), std::pow(10.0, exponent(rng))};
    const auto prob = random_problem(rng, size(rng), frac(rng), lambda);
    const Eigen::MatrixXd p = solve_reconstruction(prob);
    const Eigen::MatrixXd ref = dense_oracle(prob);
    CHECK((p - ref).norm() <= 1e-8 * ref.norm());

    const Eigen::MatrixXd m = normal_matrix(prob).dense();
    const int n = static_cast<int>(prob.n);
    const Eigen::MatrixXd m_ref = Eigen::MatrixXd(prob.mask.asDiagonal()) + lambda.lambda1 * dense_d2(n).transpose() * dense_d2(n) +
                                  lambda.lambda2 * dense_d3(n).transpose() * dense_d3(n);
    CHECK((m - m_ref).norm() <= 1e-12 * m_ref.norm());
    const Eigen::MatrixXd rhs = prob.mask.asDiagonal() * prob.targets;
    CHECK((m_ref * p - rhs).norm() <= 1e-8 * rhs.norm());
  }
}

TEST_CASE("the 60-step reference problem matches the oracle", "[reconstruct][solve]") {
  std::mt19937_64 rng(60);
  auto prob = random_problem(rng, 60, 40.0 / 60.0, {1e2, 1e2});
  CHECK(prob.measured_count() == 40);
  const Eigen::MatrixXd p = solve_reconstruction(prob);
  const Eigen::MatrixXd ref = dense_oracle(prob);
  CHECK((p - ref).norm() <= 1e-8 * ref.norm());
}

TEST_CASE("a dominant acceleration penalty gives per-column affine fits", "[reconstruct][limits]") {
  std::mt19937_64 rng(6);
  for (double l1 : {1e10, 1e12}) {
    for (int rep = 0; rep < 5; ++rep) {
      const auto prob = random_problem(rng, 80, 0.5, {l1, 0.0});
      const Eigen::MatrixXd p = solve_reconstruction(prob);
      const Eigen::MatrixXd fit = basis_fit(prob, poly_basis(80, 1));
      for (int c = 0; c < 3; ++c) CHECK((p.col(c) - fit.col(c)).norm() <= 1e-3 * fit.col(c).norm());
    }
  }
}

TEST_CASE("a jerk-only penalty fits the jerk kernel", "[reconstruct][limits]") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    const auto prob = random_problem(rng, 80, 0.6, {0.0, 1e12});
    const Eigen::MatrixXd p = solve_reconstruction(prob);
    // The stencil's kernel is span{1, k, k^2, (-1)^k}.
    const Eigen::MatrixXd fit = basis_fit(prob, poly_basis(80, 2, true));
    CHECK((p - fit).norm() <= 1e-3 * fit.norm());
  }
}

TEST_CASE("a jerk-only penalty gives the quadratic fit on smooth data", "[reconstruct][limits]") {
  // Smooth data sampled every second: the alternating component it carries
  // is negligible, so the limit is the best quadratic.
  const int n = 90;
  Eigen::MatrixXd truth(n, 3);
  for (int i = 0; i < n; ++i) {
    const double s = static_cast<double>(i);
    truth.row(i) << 70.0 * s + 0.3 * s * s, 2000.0 * std::sin(s / 60.0), 10.0 + 5.0 * s + 0.001 * s * s * s;
  }
  std::vector<int> seconds(n);
  std::iota(seconds.begin(), seconds.end(), 0);
  const auto prob = make_problem(track_from(truth, seconds), n, {0.0, 1e12});
  const Eigen::MatrixXd p = solve_reconstruction(prob);
  const Eigen::MatrixXd fit = basis_fit(prob, poly_basis(n, 2));
  for (int c = 0; c < 3; ++c) CHECK((p.col(c) - fit.col(c)).norm() <= 1e-3 * fit.col(c).norm());
}

TEST_CASE("the minimizer beats random perturbations", "[reconstruct][solve]") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto prob = random_problem(rng, 70, 0.6, {1e2, 1e4});
  const Eigen::MatrixXd p = solve_reconstruction(prob);
  const double best = objective(prob, p);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::MatrixXd d(70, 3);
    const double scale = std::pow(10.0, -3 + rep % 5);
    for (int i = 0; i < 70; ++i)
      for (int c = 0; c < 3; ++c) d(i, c) = scale * g(rng);
    CHECK(objective(prob, p + d) >= best);
  }
}

TEST_CASE("raising the acceleration penalty never raises the acceleration norm", "[reconstruct][solve]") {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    auto prob = random_problem(rng, 60, 0.7, {0.0, 1.0});
    const auto ops = build_difference_operators(60);
    double previous = std::numeric_limits<double>::infinity();
    for (double l1 : {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6}) {
      prob.lambda.lambda1 = l1;
      const double norm = ops.d2.apply(solve_reconstruction(prob)).norm();
      CHECK(norm <= previous * (1.0 + 1e-9));
      previous = norm;
    }
  }
}

TEST_CASE("ill-posed problems are rejected", "[reconstruct][solve]") {
  ReconstructionProblem prob{10, Eigen::VectorXd::Zero(10), Eigen::MatrixXd::Zero(10, 3), {1.0, 1.0}};
  prob.mask(3) = 1.0;
  CHECK_FALSE(well_posed(prob));
  CHECK_THROWS_AS(solve_reconstruction(prob), NumericalError);
  prob.mask(7) = 1.0;
  CHECK(well_posed(prob));
  CHECK_NOTHROW(solve_reconstruction(prob));

  // Jerk only: even-indexed samples cannot separate the alternating mode.
  ReconstructionProblem jerk{12, Eigen::VectorXd::Zero(12), Eigen::MatrixXd::Zero(12, 3), {0.0, 1.0}};
  for (int i = 0; i < 12; i += 2) jerk.mask(i) = 1.0;
  CHECK_FALSE(well_posed(jerk));
  jerk.mask(5) = 1.0;
  CHECK(well_posed(jerk));

  ReconstructionProblem bare{8, Eigen::VectorXd::Ones(8), Eigen::MatrixXd::Zero(8, 3), {0.0, 0.0}};
  CHECK(well_posed(bare));
  bare.mask(2) = 0.0;
  CHECK_FALSE(well_posed(bare));
}

TEST_CASE("regularization selection prefers large penalties on affine tracks", "[reconstruct][select]") {
  const int n = 60;
  Eigen::MatrixXd truth(n, 3);
  for (int i = 0; i < n; ++i) truth.row(i) << 75.0 * i, -20.0 * i + 300.0, 5.0 * i + 10.0;
  std::vector<int> seconds;
  for (int i = 0; i < n; ++i)
    if (i % 7 != 3) seconds.push_back(i);
  const auto res = select_regularization(track_from(truth, seconds), default_lambda_grid(), n, 0.25, 42);
  CHECK(res.best.lambda1 == 1e6);
  CHECK(res.best.lambda2 == 1e6);
  CHECK(res.losses.size() == 25);
  CHECK(res.best_loss <= 1e-6);
}

TEST_CASE("selected penalties beat the unregularized fit on a noisy sinusoid", "[reconstruct][select]") {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> noise(0.0, 10.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const int n = 80;
    Eigen::MatrixXd obs(n, 3);
    for (int i = 0; i < n; ++i) {
      const double s = static_cast<double>(i);
      obs.row(i) << 500.0 * std::sin(s / 12.0) + noise(rng), 300.0 * std::cos(s / 9.0) + noise(rng), 4.0 * s + noise(rng);
    }
    std::vector<int> seconds;
    for (int i = 0; i < n; ++i)
      if (i == 0 || i == n - 1 || u(rng) > 0.2) seconds.push_back(i);
    auto grid = default_lambda_grid();
    grid.push_back({0.0, 0.0});
    const auto track = track_from(obs, seconds);
    const auto res = select_regularization(track, grid, n, 0.25, seed);
    double unregularized = std::numeric_limits<double>::infinity();
    for (const auto& [lambda, loss] : res.losses)
      if (lambda.lambda1 == 0.0 && lambda.lambda2 == 0.0) unregularized = loss;
    CHECK(res.best_loss <= unregularized);
    // The same seed reproduces the choice.
    CHECK(select_regularization(track, grid, n, 0.25, seed).best == res.best);
  }
}

TEST_CASE("regularization selection needs enough measurements", "[reconstruct][select]") {
  Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(10, 3);
  CHECK_THROWS_AS(select_regularization(track_from(truth, {0, 4, 9}), default_lambda_grid(), 10, 0.25, 1), InvalidArgument);
}

TEST_CASE("common length is the median duration", "[reconstruct][length]") {
  CHECK(select_common_length(std::vector<double>{50, 70, 90}) == 70);
  CHECK(select_common_length(std::vector<double>{10}) == 10);
  CHECK(select_common_length(std::vector<double>{60, 80}) == 70);
  CHECK(select_common_length(std::vector<double>{90, 50.4, 70.6}) == 71);
  CHECK_THROWS_AS(select_common_length(std::vector<double>{}), InvalidArgument);
}

TEST_CASE("filter_and_fit drops, extrapolates and truncates", "[reconstruct][batch]") {
  const auto make = [](int duration) {
    Eigen::MatrixXd pos(duration + 1, 3);
    for (int i = 0; i <= duration; ++i) pos.row(i) << 70.0 * i, 10.0 * i, 50.0 * i;
    std::vector<int> seconds(duration + 1);
    std::iota(seconds.begin(), seconds.end(), 0);
    return track_from(pos, seconds);
  };
  const std::vector<ingest::RawTrack> tracks{make(35), make(60), make(100)};
  const auto batch = filter_and_fit(tracks, 70);
  REQUIRE(batch.dropped_short == std::vector<std::size_t>{0});
  REQUIRE(batch.fits.size() == 2);
  CHECK(batch.failures.empty());
  CHECK(batch.fits[0].source_index == 1);
  CHECK(batch.fits[1].source_index == 2);
  for (const auto& f : batch.fits) {
    CHECK(f.trajectory.rows() == 70);
    // Affine motion lies in every penalty kernel, so the extrapolated rows
    // continue the line.
    for (int i = 0; i < 70; ++i) {
      CHECK(f.trajectory(i, 0) == Approx(70.0 * i).margin(1e-4));
      CHECK(f.trajectory(i, 2) == Approx(50.0 * i).margin(1e-4));
    }
  }
  const auto trajs = batch.trajectories();
  CHECK(trajs.size() == 2);
}

TEST_CASE("filter_and_fit keeps going after a failing track", "[reconstruct][batch]") {
  ingest::RawTrack bad;
  bad.measurements = {{0.0, {0, 0, 0}}, {40.0, {1, 1, 1}}};
  ingest::RawTrack good;
  for (int i = 0; i <= 40; ++i) good.measurements.push_back({static_cast<double>(i), {1.0 * i, 0.0, 0.0}});
  FitOptions opts;
  opts.fallback = {0.0, 1.0};  // jerk only: two samples cannot pin the kernel
  const auto batch = filter_and_fit({bad, good}, 41, opts);
  REQUIRE(batch.failures.size() == 1);
  CHECK(batch.failures[0].source_index == 0);
  REQUIRE(batch.fits.size() == 1);
  CHECK(batch.fits[0].source_index == 1);
}

TEST_CASE("fit_track falls back on sparse tracks", "[reconstruct][batch]") {
  ingest::RawTrack sparse;
  sparse.measurements = {{0.0, {0, 0, 0}}, {20.0, {100, 0, 0}}, {40.0, {200, 0, 0}}};
  const auto fit = fit_track(sparse, 41, FitOptions{}, 1);
  CHECK(fit.used_fallback);
  CHECK(fit.lambda == Regularization{1e2, 1e2});
  CHECK(fit.trajectory(20, 0) == Approx(100.0).margin(1e-6));
}
