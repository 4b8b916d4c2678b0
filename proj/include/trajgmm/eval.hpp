#pragma once

// Held-out evaluation: kinematic features, smoothed-histogram KL divergence,
// prefix-prediction RMS and grid selection of K and r.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trajgmm/cluster.hpp"
#include "trajgmm/error.hpp"
#include "trajgmm/gmm.hpp"

namespace trajgmm::eval {

/// Training frame (scaled up axis, runway-anchored time) to model frame
/// (meters, forward time).
inline Trajectory to_model_frame(Trajectory traj, Mode mode, double up_factor) {
  traj.col(2) /= up_factor;
  if (mode == Mode::landing) traj = traj.colwise().reverse().eval();
  return traj;
}

inline std::vector<Trajectory> to_model_frame(const std::vector<Trajectory>& trajs, Mode mode, double up_factor) {
  std::vector<Trajectory> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) out.push_back(to_model_frame(t, mode, up_factor));
  return out;
}

struct KinematicSeries {
  Eigen::VectorXd longitudinal_speed;  // T-1, m/s
  Eigen::VectorXd vertical_speed;      // T-1, m/s
  Eigen::VectorXd turn_rate;           // T-2, rad/s
};

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);  // [-pi, pi]
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

/// First differences at 1 Hz: ground speed, climb rate and the wrapped
/// change of heading (atan2(d_east, d_north)).
inline KinematicSeries derive_kinematics(const Trajectory& traj) {
  const Eigen::Index t = traj.rows();
  if (t < 3) throw InvalidArgument("derive_kinematics: need at least 3 time steps");
  KinematicSeries k;
  k.longitudinal_speed.resize(t - 1);
  k.vertical_speed.resize(t - 1);
  k.turn_rate.resize(t - 2);
  Eigen::VectorXd heading(t - 1);
  for (Eigen::Index i = 0; i + 1 < t; ++i) {
    const Eigen::RowVector3d d = traj.row(i + 1) - traj.row(i);
    k.longitudinal_speed(i) = std::hypot(d(0), d(1));
    k.vertical_speed(i) = d(2);
    heading(i) = std::atan2(d(0), d(1));
  }
  for (Eigen::Index i = 0; i + 2 < t; ++i) k.turn_rate(i) = wrap_angle(heading(i + 1) - heading(i));
  return k;
}

/// D_KL(P || Q) of two strictly positive probability vectors.
inline double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw InvalidArgument("kl_divergence: size mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) kl += p(i) * std::log(p(i) / q(i));
  return std::max(0.0, kl);
}

/// Uniform bins over [lo, hi]; values outside are clamped into the edge bins.
class Histogram {
 public:
  Histogram(double lo, double hi, std::size_t bins) : lo_(lo), hi_(hi), counts_(std::max<std::size_t>(bins, 1), 0.0) {}

  [[nodiscard]] std::size_t bin(double x) const {
    const auto n = counts_.size();
    if (!(hi_ > lo_)) return 0;
    const double f = std::floor((x - lo_) / (hi_ - lo_) * static_cast<double>(n));
    return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(n - 1)));
  }
  void add(double x) {
    counts_[bin(x)] += 1.0;
    total_ += 1.0;
  }
  void add_to_bin(std::size_t b) {
    counts_.at(b) += 1.0;
    total_ += 1.0;
  }

  /// Additive (Laplace) smoothing with `alpha` pseudo-counts per bin.
  [[nodiscard]] Eigen::VectorXd probabilities(double alpha) const {
    Eigen::VectorXd p(static_cast<Eigen::Index>(counts_.size()));
    const double denom = total_ + alpha * static_cast<double>(counts_.size());
    for (std::size_t i = 0; i < counts_.size(); ++i) p(static_cast<Eigen::Index>(i)) = (counts_[i] + alpha) / denom;
    return p;
  }

  [[nodiscard]] double lo() const { return lo_; }
  [[nodiscard]] double hi() const { return hi_; }
  [[nodiscard]] const std::vector<double>& counts() const { return counts_; }
  [[nodiscard]] double total() const { return total_; }

 private:
  double lo_;
  double hi_;
  std::vector<double> counts_;
  double total_ = 0.0;
};

/// KL between alpha-smoothed histograms on shared uniform bins spanning the
/// pooled sample range.
inline double histogram_kl(std::span<const double> p_samples, std::span<const double> q_samples, std::size_t bins,
                           double alpha) {
  if (p_samples.empty() || q_samples.empty()) throw InvalidArgument("histogram_kl: empty sample set");
  if (!(alpha > 0.0)) throw InvalidArgument("histogram_kl: alpha must be positive");
  if (bins == 0) throw InvalidArgument("histogram_kl: need at least one bin");
  const auto [pmin, pmax] = std::minmax_element(p_samples.begin(), p_samples.end());
  const auto [qmin, qmax] = std::minmax_element(q_samples.begin(), q_samples.end());
  const double lo = std::min(*pmin, *qmin);
  const double hi = std::max(*pmax, *qmax);
  Histogram hp(lo, hi, bins), hq(lo, hi, bins);
  for (double x : p_samples) hp.add(x);
  for (double x : q_samples) hq.add(x);
  return kl_divergence(hp.probabilities(alpha), hq.probabilities(alpha));
}

struct HistogramOptions {
  std::size_t position_bins = 400;     // per lateral axis
  double position_extent = 9260.0;     // half-width of the lateral box, m
  std::size_t feature_bins = 100;
  double alpha = 1.0;
};

/// Flattened lateral occupancy histogram of all positions.
inline Histogram position_histogram(const std::vector<Trajectory>& trajs, const HistogramOptions& opts) {
  const Histogram axis(-opts.position_extent, opts.position_extent, opts.position_bins);
  Histogram flat(0.0, 1.0, opts.position_bins * opts.position_bins);
  for (const auto& t : trajs)
    for (Eigen::Index i = 0; i < t.rows(); ++i) flat.add_to_bin(axis.bin(t(i, 0)) * opts.position_bins + axis.bin(t(i, 1)));
  return flat;
}

struct FeatureSamples {
  std::vector<double> longitudinal;
  std::vector<double> vertical;
  std::vector<double> turn;
};

inline FeatureSamples pool_features(const std::vector<Trajectory>& trajs) {
  FeatureSamples f;
  for (const auto& t : trajs) {
    const auto k = derive_kinematics(t);
    f.longitudinal.insert(f.longitudinal.end(), k.longitudinal_speed.begin(), k.longitudinal_speed.end());
    f.vertical.insert(f.vertical.end(), k.vertical_speed.begin(), k.vertical_speed.end());
    f.turn.insert(f.turn.end(), k.turn_rate.begin(), k.turn_rate.end());
  }
  return f;
}

struct GenerationScore {
  double position = 0.0;
  double longitudinal_speed = 0.0;
  double vertical_speed = 0.0;
  double turn_rate = 0.0;
  [[nodiscard]] double mean() const { return 0.25 * (position + longitudinal_speed + vertical_speed + turn_rate); }
};

/// Real trajectories are P, generated ones Q.
inline GenerationScore compare_distributions(const std::vector<Trajectory>& real, const std::vector<Trajectory>& generated,
                                             const HistogramOptions& opts = {}) {
  if (real.empty() || generated.empty()) throw InvalidArgument("generation score: empty trajectory set");
  GenerationScore s;
  s.position = kl_divergence(position_histogram(real, opts).probabilities(opts.alpha),
                             position_histogram(generated, opts).probabilities(opts.alpha));
  const auto fr = pool_features(real);
  const auto fg = pool_features(generated);
  s.longitudinal_speed = histogram_kl(fr.longitudinal, fg.longitudinal, opts.feature_bins, opts.alpha);
  s.vertical_speed = histogram_kl(fr.vertical, fg.vertical, opts.feature_bins, opts.alpha);
  s.turn_rate = histogram_kl(fr.turn, fg.turn, opts.feature_bins, opts.alpha);
  return s;
}

/// Average of the four KL divergences between held-out trajectories (model
/// frame) and `n_samples` draws from the model.
inline GenerationScore generation_score(const gmm::TrajectoryModel& model, const std::vector<Trajectory>& heldout,
                                        std::size_t n_samples, std::uint64_t seed, const HistogramOptions& opts = {}) {
  return compare_distributions(heldout, gmm::sample(model, n_samples, seed), opts);
}

/// RMS of the 3-D position error between the posterior-mean prediction
/// from the first m steps and the remaining steps, pooled over trajectories.
inline double prediction_rms(const gmm::TrajectoryModel& model, const std::vector<Trajectory>& heldout, std::size_t m,
                             double noise_var) {
  if (heldout.empty()) throw InvalidArgument("prediction_rms: no held-out trajectories");
  if (m < 1 || m >= model.t_com) throw InvalidArgument("prediction_rms: prefix length must be in [1, T_com)");
  double sq = 0.0;
  std::size_t count = 0;
  for (const auto& t : heldout) {
    if (static_cast<std::size_t>(t.rows()) != model.t_com) throw InvalidArgument("prediction_rms: length mismatch");
    std::vector<Eigen::Vector3d> prefix;
    for (std::size_t i = 0; i < m; ++i) prefix.push_back(t.row(static_cast<Eigen::Index>(i)).transpose());
    const auto pred = gmm::predict_prefix(model, prefix, noise_var);
    const auto rest = static_cast<Eigen::Index>(model.t_com - m);
    sq += (pred.mean.bottomRows(rest) - t.bottomRows(rest)).squaredNorm();
    count += static_cast<std::size_t>(rest);
  }
  return std::sqrt(sq / static_cast<double>(count));
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> heldout;
};

/// Seeded shuffle, then the first round(fraction * n) indices train.
inline Split train_test_split(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidArgument("train_test_split: fraction outside [0, 1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.heldout.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return s;
}

template <typename T>
std::vector<T> take(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items.at(i));
  return out;
}

enum class Objective { generation, prediction };

inline std::string_view to_string(Objective o) { return o == Objective::generation ? "generation" : "prediction"; }

inline Objective parse_objective(std::string_view s) {
  if (s == "generation") return Objective::generation;
  if (s == "prediction") return Objective::prediction;
  throw InvalidArgument("unknown objective '" + std::string(s) + "'");
}

struct TrainOptions {
  Mode mode = Mode::takeoff;
  double up_factor = 10.0;
  std::uint64_t seed = 0;
  cluster::KMeansOptions kmeans;
};

struct TrainedModel {
  gmm::TrajectoryModel model;
  cluster::KMeansResult kmeans;
};

/// Cluster scaled training trajectories and build the rank-r mixture.
inline TrainedModel train(const std::vector<Trajectory>& trajs, std::size_t k, std::size_t r, const TrainOptions& opts) {
  if (trajs.empty()) throw InvalidArgument("train: no trajectories");
  const Eigen::MatrixXd pts = cluster::stack(trajs);
  auto km = cluster::kmeans_pp(pts, k, opts.seed, opts.kmeans);
  const auto stats = cluster::cluster_stats(pts, km.assignments, k, km.centers);
  return {gmm::fit_model(stats, r, opts.mode, opts.up_factor), std::move(km)};
}

struct EvalOptions {
  std::size_t prefix_length = 10;
  double noise_var = 15.0 * 15.0;
  std::size_t n_samples = 1000;
  std::uint64_t sample_seed = 0;
  HistogramOptions histogram;
};

struct ScoreRow {
  std::size_t k = 0;
  std::size_t r = 0;
  double score = 0.0;
};

struct Selection {
  std::size_t k = 0;
  std::size_t r = 0;
  std::vector<ScoreRow> table;  // K-major grid order
  gmm::TrajectoryModel model;   // the selected model
};

inline double score_model(const gmm::TrajectoryModel& model, const std::vector<Trajectory>& heldout_model_frame,
                          Objective objective, const EvalOptions& eval) {
  return objective == Objective::generation
             ? generation_score(model, heldout_model_frame, eval.n_samples, eval.sample_seed, eval.histogram).mean()
             : prediction_rms(model, heldout_model_frame, eval.prefix_length, eval.noise_var);
}

/// Exhaustive grid over (K, r): train on `train_set` (training frame), score
/// on `heldout` (training frame, converted internally), keep the minimum.
/// Ties go to the earlier grid cell. Grid cells with K above the training
/// size or r above the dimension are skipped.
inline Selection select_hyperparams(const std::vector<Trajectory>& train_set, const std::vector<Trajectory>& heldout,
                                    const std::vector<std::size_t>& k_grid, const std::vector<std::size_t>& r_grid,
                                    Objective objective, const TrainOptions& opts, const EvalOptions& eval) {
  if (k_grid.empty() || r_grid.empty()) throw InvalidArgument("select_hyperparams: empty grid");
  if (train_set.empty() || heldout.empty()) throw InvalidArgument("select_hyperparams: empty train or held-out set");
  const auto held_model = to_model_frame(heldout, opts.mode, opts.up_factor);
  const Eigen::MatrixXd pts = cluster::stack(train_set);
  const auto dim = static_cast<std::size_t>(pts.rows());
  Selection sel;
  double best = std::numeric_limits<double>::infinity();
  for (const auto k : k_grid) {
    if (k < 1 || k > train_set.size()) continue;
    const auto km = cluster::kmeans_pp(pts, k, opts.seed, opts.kmeans);
    const auto stats = cluster::cluster_stats(pts, km.assignments, k, km.centers);
    for (const auto r : r_grid) {
      if (r < 1 || r > dim) continue;
      auto model = gmm::fit_model(stats, r, opts.mode, opts.up_factor);
      const double s = score_model(model, held_model, objective, eval);
      sel.table.push_back({k, r, s});
      if (s < best) {
        best = s;
        sel.k = k;
        sel.r = r;
        sel.model = std::move(model);
      }
    }
  }
  if (sel.table.empty()) throw InvalidArgument("select_hyperparams: no valid grid cell");
  return sel;
}

}  // namespace trajgmm::eval
