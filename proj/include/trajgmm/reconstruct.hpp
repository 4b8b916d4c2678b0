#pragma once

// Fixed-length trajectory reconstruction: regularized least squares with
// acceleration and jerk penalties, solved through a 9-banded normal system.

#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "trajgmm/banded.hpp"
#include "trajgmm/error.hpp"
#include "trajgmm/ingest.hpp"

namespace trajgmm {

/// T x 3 positions (east, north, up) sampled at 1 Hz.
using Trajectory = Eigen::Matrix<double, Eigen::Dynamic, 3>;

namespace reconstruct {

/// A banded difference operator given by a row stencil: row i has
/// coefficient coeffs[k] at column i + offsets[k].
struct DifferenceOperator {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;
  std::vector<double> coeffs;

  [[nodiscard]] Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.rows()) != cols) throw InvalidArgument("difference operator: size mismatch");
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), x.cols());
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = 0; k < offsets.size(); ++k) y.row(i) += coeffs[k] * x.row(i + offsets[k]);
    return y;
  }

  [[nodiscard]] Eigen::MatrixXd dense() const {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = 0; k < offsets.size(); ++k) d(i, i + offsets[k]) = coeffs[k];
    return d;
  }
};

struct DifferenceOperators {
  DifferenceOperator d2;  // (N-2) x N, stencil (1, -2, 1)
  DifferenceOperator d3;  // (N-4) x N, stencil (-1, 2, 0, -2, 1)
};

inline DifferenceOperators build_difference_operators(std::size_t n) {
  if (n < 5) throw InvalidArgument("difference operators need N >= 5, got " + std::to_string(n));
  return {{n - 2, n, {0, 1, 2}, {1.0, -2.0, 1.0}}, {n - 4, n, {0, 1, 3, 4}, {-1.0, 2.0, -2.0, 1.0}}};
}

struct Regularization {
  double lambda1 = 1e2;  // acceleration
  double lambda2 = 1e2;  // jerk
  friend bool operator==(const Regularization&, const Regularization&) = default;
};

struct ReconstructionProblem {
  std::size_t n = 0;
  Eigen::VectorXd mask;     // 1 where at least one report falls in that second
  Eigen::MatrixXd targets;  // n x 3, per-second mean of reports, zero elsewhere
  Regularization lambda;

  [[nodiscard]] std::size_t measured_count() const { return static_cast<std::size_t>((mask.array() > 0.0).count()); }
};

/// Bins reports into integer seconds [0, n) and averages within each second.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> build_targets(const ingest::RawTrack& track, std::size_t n) {
  Eigen::VectorXd mask = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 3);
  for (const auto& m : track.measurements) {
    const double t = std::round(m.time);
    if (t < 0.0 || t >= static_cast<double>(n)) continue;
    const auto i = static_cast<Eigen::Index>(t);
    targets.row(i) += m.position.vec().transpose();
    mask(i) += 1.0;
  }
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask(i) > 0.0) {
      targets.row(i) /= mask(i);
      mask(i) = 1.0;
    }
  }
  return {std::move(mask), std::move(targets)};
}

inline ReconstructionProblem make_problem(const ingest::RawTrack& track, std::size_t n, Regularization lambda) {
  auto [mask, targets] = build_targets(track, n);
  return {n, std::move(mask), std::move(targets), lambda};
}

/// Normal-equations matrix A^T A + l1 D2^T D2 + l2 D3^T D3 in band storage
/// (half-bandwidth 4).
inline BandedSpdMatrix normal_matrix(const ReconstructionProblem& prob) {
  const auto ops = build_difference_operators(prob.n);
  BandedSpdMatrix m(prob.n, 4);
  for (std::size_t i = 0; i < prob.n; ++i) m.at(i, i) = prob.mask(static_cast<Eigen::Index>(i));
  const auto accumulate = [&m](const DifferenceOperator& d, double weight) {
    if (weight == 0.0) return;
    for (std::size_t r = 0; r < d.rows; ++r)
      for (std::size_t a = 0; a < d.offsets.size(); ++a)
        for (std::size_t b = 0; b <= a; ++b) {
          m.at(r + d.offsets[a], r + d.offsets[b]) += weight * d.coeffs[a] * d.coeffs[b];
        }
  };
  accumulate(ops.d2, prob.lambda.lambda1);
  accumulate(ops.d3, prob.lambda.lambda2);
  return m;
}

/// Checks that the measured seconds pin down every sequence the active
/// penalties leave unpenalized; otherwise the minimizer is not unique.
inline bool well_posed(const ReconstructionProblem& prob) {
  if (prob.lambda.lambda1 < 0.0 || prob.lambda.lambda2 < 0.0) return false;
  const auto n = static_cast<Eigen::Index>(prob.n);
  const std::size_t measured = prob.measured_count();
  if (prob.lambda.lambda1 == 0.0 && prob.lambda.lambda2 == 0.0) return measured == prob.n;
  // Null space: affine sequences when the acceleration term is active,
  // otherwise span{1, k, k^2, (-1)^k} (kernel of the jerk stencil).
  const Eigen::Index dim = prob.lambda.lambda1 > 0.0 ? 2 : 4;
  if (measured < static_cast<std::size_t>(dim)) return false;
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(measured), dim);
  Eigen::Index row = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (prob.mask(i) <= 0.0) continue;
    const double s = static_cast<double>(i) / static_cast<double>(n);
    basis(row, 0) = 1.0;
    basis(row, 1) = s;
    if (dim == 4) {
      basis(row, 2) = s * s;
      basis(row, 3) = (i % 2 == 0) ? 1.0 : -1.0;
    }
    ++row;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(basis);
  const auto& sv = svd.singularValues();
  return sv(dim - 1) > 1e-10 * sv(0);
}

/// Unique minimizer of |A P - P_hat|^2 + l1 |D2 P|^2 + l2 |D3 P|^2.
inline Eigen::MatrixXd solve_reconstruction(const ReconstructionProblem& prob) {
  if (prob.n < 5) throw InvalidArgument("reconstruction needs N >= 5");
  if (prob.mask.size() != static_cast<Eigen::Index>(prob.n) || prob.targets.rows() != static_cast<Eigen::Index>(prob.n)) {
    throw InvalidArgument("reconstruction: mask/target size mismatch");
  }
  if (!well_posed(prob)) {
    throw NumericalError("reconstruction: singular system (too few measured seconds for the active penalties)");
  }
  auto m = normal_matrix(prob);
  m.factorize();
  const Eigen::MatrixXd rhs = prob.mask.asDiagonal() * prob.targets;
  return m.solve(rhs);
}

/// Objective value of a candidate reconstruction.
inline double objective(const ReconstructionProblem& prob, const Eigen::MatrixXd& p) {
  const auto ops = build_difference_operators(prob.n);
  const double data = (prob.mask.asDiagonal() * p - prob.targets).squaredNorm();
  return data + prob.lambda.lambda1 * ops.d2.apply(p).squaredNorm() + prob.lambda.lambda2 * ops.d3.apply(p).squaredNorm();
}

inline std::vector<Regularization> default_lambda_grid() {
  const std::vector<double> values{1e-2, 1.0, 1e2, 1e4, 1e6};
  std::vector<Regularization> grid;
  for (double l1 : values)
    for (double l2 : values) grid.push_back({l1, l2});
  return grid;
}

struct ValidationResult {
  Regularization best;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::pair<Regularization, double>> losses;  // grid order
};

/// Holds out a random fraction of the measured seconds, fits every grid
/// point on the rest and keeps the one with the lowest held-out squared
/// error. Near-ties (relative 1e-9) go to the larger penalties.
inline ValidationResult select_regularization(const ingest::RawTrack& track, std::vector<Regularization> grid,
                                              std::size_t n, double holdout_fraction, std::uint64_t seed) {
  if (grid.empty()) throw InvalidArgument("select_regularization: empty grid");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw InvalidArgument("select_regularization: holdout fraction must be in (0, 1)");
  }
  auto [mask, targets] = build_targets(track, n);
  std::vector<Eigen::Index> measured;
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    if (mask(i) > 0.0) measured.push_back(i);

  const auto held_count = static_cast<std::size_t>(
      std::max<long>(1, std::lround(holdout_fraction * static_cast<double>(measured.size()))));
  if (measured.size() < held_count + 3) {
    throw InvalidArgument("select_regularization: insufficient measurements (" + std::to_string(measured.size()) +
                          " measured seconds)");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(measured.begin(), measured.end(), rng);
  Eigen::VectorXd train_mask = mask;
  Eigen::VectorXd held_mask = Eigen::VectorXd::Zero(mask.size());
  for (std::size_t k = 0; k < held_count; ++k) {
    train_mask(measured[k]) = 0.0;
    held_mask(measured[k]) = 1.0;
  }
  const Eigen::MatrixXd train_targets = train_mask.asDiagonal() * targets;
  const double reference = (held_mask.asDiagonal() * targets).squaredNorm();

  std::stable_sort(grid.begin(), grid.end(), [](const Regularization& a, const Regularization& b) {
    return a.lambda1 != b.lambda1 ? a.lambda1 < b.lambda1 : a.lambda2 < b.lambda2;
  });

  ValidationResult result;
  double min_loss = std::numeric_limits<double>::infinity();
  for (const auto& lambda : grid) {
    const ReconstructionProblem prob{n, train_mask, train_targets, lambda};
    double loss = std::numeric_limits<double>::infinity();
    if (well_posed(prob)) {
      const Eigen::MatrixXd p = solve_reconstruction(prob);
      loss = (held_mask.asDiagonal() * (p - targets)).squaredNorm();
    }
    result.losses.emplace_back(lambda, loss);
    if (!std::isfinite(loss)) continue;
    min_loss = std::min(min_loss, loss);
    const double tol = 1e-9 * min_loss + 1e-15 * reference;
    if (loss <= min_loss + tol) {
      result.best = lambda;
      result.best_loss = loss;
    }
  }
  const bool found = std::isfinite(min_loss);
  if (!found) throw NumericalError("select_regularization: no grid point yields a well-posed fit");
  return result;
}

/// Median of the durations rounded to the nearest second; even counts use
/// the midpoint of the two middle values.
inline std::size_t select_common_length(std::vector<double> durations) {
  if (durations.empty()) throw InvalidArgument("select_common_length: no tracks");
  std::sort(durations.begin(), durations.end());
  const std::size_t k = durations.size() / 2;
  const double median = durations.size() % 2 == 1 ? durations[k] : 0.5 * (durations[k - 1] + durations[k]);
  return static_cast<std::size_t>(std::lround(median));
}

inline std::size_t select_common_length(const std::vector<ingest::RawTrack>& tracks) {
  std::vector<double> durations;
  durations.reserve(tracks.size());
  for (const auto& t : tracks) durations.push_back(t.duration());
  return select_common_length(std::move(durations));
}

struct FitOptions {
  double short_slack = 30.0;
  std::vector<Regularization> grid = default_lambda_grid();
  double holdout_fraction = 0.25;
  Regularization fallback{1e2, 1e2};
  std::uint64_t seed = 0;
};

struct TrackFit {
  std::size_t source_index = 0;
  Regularization lambda;
  bool used_fallback = false;
  Trajectory trajectory;
};

struct FitFailure {
  std::size_t source_index = 0;
  std::string message;
};

struct FitBatch {
  std::vector<TrackFit> fits;  // source order
  std::vector<std::size_t> dropped_short;
  std::vector<FitFailure> failures;

  [[nodiscard]] std::vector<Trajectory> trajectories() const {
    std::vector<Trajectory> out;
    out.reserve(fits.size());
    for (const auto& f : fits) out.push_back(f.trajectory);
    return out;
  }
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Reconstructs one canonical, scaled track onto [0, t_com).
inline TrackFit fit_track(const ingest::RawTrack& track, std::size_t t_com, const FitOptions& opts,
                          std::uint64_t seed) {
  const auto last = static_cast<std::size_t>(std::max(0L, std::lround(track.duration())));
  const std::size_t n = std::max({last + 1, t_com, std::size_t{5}});
  TrackFit fit;
  try {
    fit.lambda = select_regularization(track, opts.grid, n, opts.holdout_fraction, seed).best;
  } catch (const InvalidArgument&) {
    fit.lambda = opts.fallback;
    fit.used_fallback = true;
  }
  const Eigen::MatrixXd p = solve_reconstruction(make_problem(track, n, fit.lambda));
  fit.trajectory = p.topRows(static_cast<Eigen::Index>(t_com));
  return fit;
}

/// Drops tracks much shorter than t_com and reconstructs the rest. Solver
/// failures are collected per track and do not abort the batch.
inline FitBatch filter_and_fit(const std::vector<ingest::RawTrack>& tracks, std::size_t t_com,
                               const FitOptions& opts = {}) {
  if (t_com < 5) throw InvalidArgument("filter_and_fit: T_com must be at least 5");
  FitBatch batch;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    if (tracks[i].duration() < static_cast<double>(t_com) - opts.short_slack) {
      batch.dropped_short.push_back(i);
      continue;
    }
    try {
      auto fit = fit_track(tracks[i], t_com, opts, mix_seed(opts.seed, i));
      fit.source_index = i;
      batch.fits.push_back(std::move(fit));
    } catch (const Error& e) {
      batch.failures.push_back({i, e.what()});
    }
  }
  return batch;
}

}  // namespace reconstruct
}  // namespace trajgmm
