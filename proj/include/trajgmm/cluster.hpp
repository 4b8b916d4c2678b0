#pragma once

// K-means++ clustering of vectorized trajectories and per-cluster moments.

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "trajgmm/error.hpp"
#include "trajgmm/reconstruct.hpp"

namespace trajgmm::cluster {

/// Column stacking: all east samples, then north, then up.
inline Eigen::VectorXd vectorize(const Trajectory& traj) {
  return Eigen::Map<const Eigen::VectorXd>(traj.data(), traj.size());
}

inline Trajectory devectorize(const Eigen::VectorXd& v, std::size_t t_com) {
  if (static_cast<std::size_t>(v.size()) != 3 * t_com) throw InvalidArgument("devectorize: size is not 3 * T_com");
  return Eigen::Map<const Trajectory>(v.data(), static_cast<Eigen::Index>(t_com), 3);
}

/// Stacks trajectories as the columns of a (3 T_com) x n matrix.
inline Eigen::MatrixXd stack(const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) return {};
  const Eigen::Index dim = trajs.front().size();
  Eigen::MatrixXd pts(dim, static_cast<Eigen::Index>(trajs.size()));
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (trajs[i].size() != dim) throw InvalidArgument("stack: trajectories differ in length");
    pts.col(static_cast<Eigen::Index>(i)) = vectorize(trajs[i]);
  }
  return pts;
}

struct KMeansOptions {
  std::size_t max_iters = 300;
  double tol = 1e-6;
  std::size_t restarts = 1;
};

struct KMeansResult {
  Eigen::MatrixXd centers;  // dim x K
  std::vector<std::size_t> assignments;
  double objective = 0.0;
  std::vector<double> objective_history;  // one entry per assignment step
  std::size_t iterations = 0;
};

namespace detail {

/// Nearest center per point (ties to the lowest index) and the total
/// squared distance.
inline double assign(const Eigen::MatrixXd& pts, const Eigen::MatrixXd& centers, std::vector<std::size_t>& out) {
  out.resize(static_cast<std::size_t>(pts.cols()));
  double total = 0.0;
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (Eigen::Index j = 0; j < centers.cols(); ++j) {
      const double d = (pts.col(i) - centers.col(j)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<std::size_t>(j);
      }
    }
    out[static_cast<std::size_t>(i)] = arg;
    total += best;
  }
  return total;
}

inline Eigen::MatrixXd seed_plus_plus(const Eigen::MatrixXd& pts, std::size_t k, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(pts.cols());
  Eigen::MatrixXd centers(pts.rows(), static_cast<Eigen::Index>(k));
  std::vector<bool> chosen(n, false);
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  centers.col(0) = pts.col(static_cast<Eigen::Index>(first));
  chosen[first] = true;

  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (pts.col(static_cast<Eigen::Index>(i)) - centers.col(0)).squaredNorm();

  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > u) break;
      }
    } else {
      // Every point coincides with a chosen center: pick any unchosen one.
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) free.push_back(i);
      pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
    }
    chosen[pick] = true;
    centers.col(static_cast<Eigen::Index>(c)) = pts.col(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (pts.col(static_cast<Eigen::Index>(i)) - centers.col(static_cast<Eigen::Index>(c))).squaredNorm());
  }
  return centers;
}

inline KMeansResult lloyd(const Eigen::MatrixXd& pts, Eigen::MatrixXd centers, const KMeansOptions& opts) {
  KMeansResult res;
  const Eigen::Index k = centers.cols();
  std::vector<std::size_t> assign_now;
  res.objective_history.push_back(assign(pts, centers, assign_now));
  std::vector<std::size_t> next;
  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(pts.rows(), k);
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
      const auto j = assign_now[static_cast<std::size_t>(i)];
      sums.col(static_cast<Eigen::Index>(j)) += pts.col(i);
      ++counts[j];
    }
    double movement = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] == 0) continue;  // empty clusters keep their center
      const Eigen::VectorXd c = sums.col(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);
      movement = std::max(movement, (c - centers.col(j)).norm());
      centers.col(j) = c;
    }
    res.objective_history.push_back(assign(pts, centers, next));
    res.iterations = it + 1;
    const bool changed = next != assign_now;
    assign_now.swap(next);
    if (!changed || movement < opts.tol) break;
  }
  res.centers = std::move(centers);
  res.assignments = std::move(assign_now);
  res.objective = res.objective_history.back();
  return res;
}

}  // namespace detail

/// K-means++ seeding followed by Lloyd iterations. Points are the columns of
/// `points`. They are put in lexicographic order before seeding so the result
/// does not depend on input order; assignments are reported in input order.
inline KMeansResult kmeans_pp(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed,
                              const KMeansOptions& opts = {}) {
  const auto n = static_cast<std::size_t>(points.cols());
  if (k < 1) throw InvalidArgument("kmeans: K must be at least 1");
  if (n < k) throw InvalidArgument("kmeans: K = " + std::to_string(k) + " exceeds point count " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&points](std::size_t a, std::size_t b) {
    const auto ca = points.col(static_cast<Eigen::Index>(a));
    const auto cb = points.col(static_cast<Eigen::Index>(b));
    return std::lexicographical_compare(ca.begin(), ca.end(), cb.begin(), cb.end());
  });
  Eigen::MatrixXd sorted(points.rows(), points.cols());
  for (std::size_t i = 0; i < n; ++i) sorted.col(static_cast<Eigen::Index>(i)) = points.col(static_cast<Eigen::Index>(order[i]));

  KMeansResult best;
  bool have = false;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opts.restarts); ++r) {
    std::mt19937_64 rng(reconstruct::mix_seed(seed, r));
    auto res = detail::lloyd(sorted, detail::seed_plus_plus(sorted, k, rng), opts);
    if (!have || res.objective < best.objective) {
      best = std::move(res);
      have = true;
    }
  }
  std::vector<std::size_t> in_order(n);
  for (std::size_t i = 0; i < n; ++i) in_order[order[i]] = best.assignments[i];
  best.assignments = std::move(in_order);
  return best;
}

/// Total squared distance of points to their assigned centers.
inline double kmeans_objective(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centers,
                               const std::vector<std::size_t>& assignments) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < points.cols(); ++i)
    total += (points.col(i) - centers.col(static_cast<Eigen::Index>(assignments[static_cast<std::size_t>(i)]))).squaredNorm();
  return total;
}

struct ClusterStats {
  Eigen::VectorXd weights;
  Eigen::MatrixXd centers;  // dim x K
  std::vector<Eigen::MatrixXd> covariances;
  std::vector<std::size_t> counts;

  [[nodiscard]] std::size_t k() const { return counts.size(); }
};

/// Per-cluster frequency, mean and population covariance (1/n). Empty
/// clusters get zero weight and covariance and keep `fallback_centers`.
inline ClusterStats cluster_stats(const Eigen::MatrixXd& points, const std::vector<std::size_t>& assignments,
                                  std::size_t k, const Eigen::MatrixXd& fallback_centers = {}) {
  if (static_cast<std::size_t>(points.cols()) != assignments.size()) {
    throw InvalidArgument("cluster_stats: assignment count differs from point count");
  }
  if (points.cols() == 0) throw InvalidArgument("cluster_stats: no points");
  const Eigen::Index dim = points.rows();
  ClusterStats s;
  s.counts.assign(k, 0);
  s.centers = Eigen::MatrixXd::Zero(dim, static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] >= k) throw InvalidArgument("cluster_stats: assignment out of range");
    s.centers.col(static_cast<Eigen::Index>(assignments[i])) += points.col(static_cast<Eigen::Index>(i));
    ++s.counts[assignments[i]];
  }
  s.weights.resize(static_cast<Eigen::Index>(k));
  s.covariances.assign(k, Eigen::MatrixXd::Zero(dim, dim));
  const double total = static_cast<double>(points.cols());
  for (std::size_t j = 0; j < k; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    s.weights(jj) = static_cast<double>(s.counts[j]) / total;
    if (s.counts[j] == 0) {
      s.centers.col(jj) = fallback_centers.cols() > jj ? Eigen::VectorXd(fallback_centers.col(jj))
                                                       : Eigen::VectorXd::Zero(dim);
      continue;
    }
    s.centers.col(jj) /= static_cast<double>(s.counts[j]);
    Eigen::MatrixXd centered(dim, static_cast<Eigen::Index>(s.counts[j]));
    Eigen::Index c = 0;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] == j) centered.col(c++) = points.col(static_cast<Eigen::Index>(i)) - s.centers.col(jj);
    Eigen::MatrixXd lower = Eigen::MatrixXd::Zero(dim, dim);
    lower.selfadjointView<Eigen::Lower>().rankUpdate(centered, 1.0 / static_cast<double>(s.counts[j]));
    s.covariances[j] = lower.selfadjointView<Eigen::Lower>();
  }
  return s;
}

}  // namespace trajgmm::cluster
