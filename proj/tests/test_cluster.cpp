#include <trajgmm/cluster.hpp>

#include <catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <random>

using Catch::Approx;
using namespace trajgmm;
using namespace trajgmm::cluster;

namespace {

struct Blobs {
  Eigen::MatrixXd points;
  std::vector<std::size_t> labels;
};

Blobs make_blobs(std::size_t k, std::size_t per, std::size_t dim, double separation, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Blobs b;
  b.points.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(k * per));
  Eigen::Index col = 0;
  for (std::size_t j = 0; j < k; ++j) {
    Eigen::VectorXd center = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    center(static_cast<Eigen::Index>(j % dim)) = separation * static_cast<double>(1 + j / dim);
    for (std::size_t i = 0; i < per; ++i) {
      for (Eigen::Index d = 0; d < center.size(); ++d) b.points(d, col) = center(d) + sigma * g(rng);
      b.labels.push_back(j);
      ++col;
    }
  }
  return b;
}

// True when the two labelings agree up to a relabeling.
bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::map<std::size_t, std::size_t> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto [it1, new1] = ab.emplace(a[i], b[i]);
    const auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("vectorize stacks columns", "[cluster][vectorize]") {
  Trajectory t(2, 3);
  t << 1, 2, 3, 4, 5, 6;
  const Eigen::VectorXd v = vectorize(t);
  REQUIRE(v.size() == 6);
  const std::vector<double> expected{1, 4, 2, 5, 3, 6};
  for (int i = 0; i < 6; ++i) CHECK(v(i) == expected[static_cast<std::size_t>(i)]);
  CHECK(devectorize(v, 2) == t);
  CHECK(vectorize(Trajectory::Zero(4, 3)).isZero(0.0));

  const auto stacked = stack({t, 2 * t});
  CHECK(stacked.rows() == 6);
  CHECK(stacked.cols() == 2);
  CHECK(stacked.col(1) == 2 * v);
}

TEST_CASE("K = 1 converges to the mean", "[cluster][kmeans]") {
  const auto b = make_blobs(3, 20, 4, 10.0, 1.0, 1);
  const auto res = kmeans_pp(b.points, 1, 7);
  CHECK((res.centers.col(0) - b.points.rowwise().mean()).norm() <= 1e-12 * b.points.norm());
  for (auto a : res.assignments) CHECK(a == 0);
}

TEST_CASE("K equal to the point count gives zero objective", "[cluster][kmeans]") {
  const auto b = make_blobs(2, 6, 3, 5.0, 1.0, 2);
  const auto res = kmeans_pp(b.points, 12, 3);
  CHECK(res.objective == 0.0);
  auto sorted = res.assignments;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  CHECK_THROWS_AS(kmeans_pp(b.points, 13, 3), InvalidArgument);
  CHECK_THROWS_AS(kmeans_pp(b.points, 0, 3), InvalidArgument);
}

TEST_CASE("two blobs 1000 apart are split exactly", "[cluster][kmeans]") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = make_blobs(2, 50, 5, 1000.0, 1.0, 100 + seed);
    const auto res = kmeans_pp(b.points, 2, seed);
    CHECK(same_partition(res.assignments, b.labels));
  }
}

TEST_CASE("Lloyd objective never increases and final assignments are nearest", "[cluster][kmeans]") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Eigen::MatrixXd pts(6, 200);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = g(rng) * (1.0 + (i % 3));
    const auto res = kmeans_pp(pts, 7, seed);
    for (std::size_t i = 1; i < res.objective_history.size(); ++i) {
      CHECK(res.objective_history[i] <= res.objective_history[i - 1]);
    }
    std::vector<std::size_t> again;
    detail::assign(pts, res.centers, again);
    CHECK(again == res.assignments);
    CHECK(res.objective == Approx(kmeans_objective(pts, res.centers, res.assignments)).epsilon(1e-12));
  }
}

TEST_CASE("clustering does not depend on input order", "[cluster][kmeans]") {
  const auto b = make_blobs(4, 40, 3, 8.0, 2.0, 9);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(b.points.cols()));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(1);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd shuffled(b.points.rows(), b.points.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled.col(static_cast<Eigen::Index>(i)) = b.points.col(perm[i]);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = kmeans_pp(b.points, 4, seed);
    const auto c = kmeans_pp(shuffled, 4, seed);
    CHECK(a.objective == c.objective);
  }
}

TEST_CASE("same seed gives the same clustering", "[cluster][kmeans]") {
  const auto b = make_blobs(3, 30, 4, 6.0, 2.0, 10);
  const auto a = kmeans_pp(b.points, 5, 77);
  const auto c = kmeans_pp(b.points, 5, 77);
  CHECK(a.assignments == c.assignments);
  CHECK(a.centers == c.centers);
}

TEST_CASE("restarts keep the best objective", "[cluster][kmeans]") {
  const auto b = make_blobs(6, 20, 2, 5.0, 2.0, 11);
  KMeansOptions many;
  many.restarts = 8;
  const auto best = kmeans_pp(b.points, 6, 3, many);
  // The first restart is the single run.
  CHECK(best.objective <= kmeans_pp(b.points, 6, 3).objective);
}

TEST_CASE("cluster_stats closed forms", "[cluster][stats]") {
  Eigen::MatrixXd pts(2, 3);
  pts << 1.0, 3.0, 10.0,
         2.0, 6.0, -4.0;
  const auto s = cluster_stats(pts, {0, 0, 1}, 3, Eigen::MatrixXd::Constant(2, 3, 7.0));
  CHECK(s.counts == std::vector<std::size_t>{2, 1, 0});
  CHECK(s.weights(0) == Approx(2.0 / 3.0));
  CHECK(s.weights(1) == Approx(1.0 / 3.0));
  CHECK(s.weights(2) == 0.0);
  CHECK(s.weights.sum() == Approx(1.0).margin(1e-12));
  CHECK(s.centers(0, 0) == 2.0);
  CHECK(s.centers(1, 0) == 4.0);
  // Two points: Q = 1/2 [(x - mu)(x - mu)^T + (y - mu)(y - mu)^T].
  Eigen::Matrix2d q;
  q << 1.0, 2.0, 2.0, 4.0;
  CHECK((s.covariances[0] - q).norm() <= 1e-14);
  CHECK(s.covariances[1].isZero(0.0));
  CHECK(s.covariances[2].isZero(0.0));
  CHECK(s.centers(0, 2) == 7.0);
}

TEST_CASE("cluster_stats matches a two-pass covariance oracle", "[cluster][stats]") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  const int dim = 9, n = 50;
  Eigen::MatrixXd mix = Eigen::MatrixXd::Random(dim, dim);
  Eigen::MatrixXd pts(dim, n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd z(dim);
    for (int d = 0; d < dim; ++d) z(d) = g(rng);
    pts.col(i) = mix * z + Eigen::VectorXd::Constant(dim, 300.0);
  }
  const auto s = cluster_stats(pts, std::vector<std::size_t>(n, 0), 1);

  // Naive two-pass oracle.
  std::vector<double> mean(dim, 0.0);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) mean[d] += pts(d, i);
  for (auto& m : mean) m /= n;
  for (int a = 0; a < dim; ++a) {
    CHECK(s.centers(a, 0) == Approx(mean[a]).epsilon(1e-14));
    for (int b = 0; b < dim; ++b) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += (pts(a, i) - mean[a]) * (pts(b, i) - mean[b]);
      acc /= n;
      CHECK(std::abs(s.covariances[0](a, b) - acc) <= 1e-10 * (1.0 + std::abs(acc)));
    }
  }
}

TEST_CASE("cluster covariances are symmetric and PSD", "[cluster][stats]") {
  const auto b = make_blobs(3, 40, 12, 20.0, 3.0, 13);
  const auto res = kmeans_pp(b.points, 3, 1);
  const auto s = cluster_stats(b.points, res.assignments, 3, res.centers);
  std::mt19937_64 rng(14);
  std::normal_distribution<double> g(0.0, 1.0);
  for (const auto& q : s.covariances) {
    CHECK((q - q.transpose()).norm() <= 1e-10 * std::max(1.0, q.norm()));
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::VectorXd x(q.rows());
      for (Eigen::Index d = 0; d < x.size(); ++d) x(d) = g(rng);
      CHECK(x.dot(q * x) >= -1e-8 * x.squaredNorm() * q.trace());
    }
  }
  CHECK_THROWS_AS(cluster_stats(b.points, std::vector<std::size_t>(b.labels.size(), 4), 3), InvalidArgument);
}
