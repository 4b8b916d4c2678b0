#pragma once

// Gaussian mixture over fixed-length trajectories with low-rank cluster
// covariances: construction from cluster moments, degenerate density,
// sampling, cluster posteriors and latent-space conditioning.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trajgmm/cluster.hpp"
#include "trajgmm/error.hpp"
#include "trajgmm/ingest.hpp"

namespace trajgmm::gmm {

/// Principal-deviation factorization Q ~ U diag(sigma) U^T.
struct LowRankCovariance {
  Eigen::MatrixXd deviations;      // dim x r, orthonormal columns
  Eigen::VectorXd singular_values;  // r, non-increasing, >= 0

  [[nodiscard]] Eigen::MatrixXd dense() const {
    return deviations * singular_values.asDiagonal() * deviations.transpose();
  }
};

struct ClusterModel {
  double weight = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd deviations;
  Eigen::VectorXd singular_values;

  [[nodiscard]] Eigen::MatrixXd covariance() const {
    return deviations * singular_values.asDiagonal() * deviations.transpose();
  }
  /// U diag(sqrt(sigma)): maps a standard-normal latent to a deviation.
  [[nodiscard]] Eigen::MatrixXd loading() const {
    return deviations * singular_values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
};

struct TrajectoryModel {
  Mode mode = Mode::takeoff;
  std::size_t t_com = 0;
  std::size_t rank = 0;
  double up_factor = 10.0;
  std::vector<ClusterModel> clusters;

  [[nodiscard]] std::size_t k() const { return clusters.size(); }
  [[nodiscard]] std::size_t dim() const { return 3 * t_com; }
  [[nodiscard]] Eigen::VectorXd weights() const {
    Eigen::VectorXd w(static_cast<Eigen::Index>(clusters.size()));
    for (std::size_t j = 0; j < clusters.size(); ++j) w(static_cast<Eigen::Index>(j)) = clusters[j].weight;
    return w;
  }
};

/// Top-r eigenpairs of a symmetric PSD matrix; tiny negative eigenvalues
/// from round-off are clamped to zero.
inline LowRankCovariance truncate_covariance(const Eigen::MatrixXd& q, std::size_t r) {
  const auto dim = static_cast<std::size_t>(q.rows());
  if (q.rows() != q.cols()) throw InvalidArgument("truncate_covariance: matrix is not square");
  if (r < 1 || r > dim) {
    throw InvalidArgument("truncate_covariance: rank " + std::to_string(r) + " outside [1, " + std::to_string(dim) + "]");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(q);
  if (eig.info() != Eigen::Success) throw NumericalError("truncate_covariance: eigendecomposition failed");
  LowRankCovariance out;
  out.deviations.resize(q.rows(), static_cast<Eigen::Index>(r));
  out.singular_values.resize(static_cast<Eigen::Index>(r));
  for (std::size_t i = 0; i < r; ++i) {
    const auto src = static_cast<Eigen::Index>(dim - 1 - i);
    out.deviations.col(static_cast<Eigen::Index>(i)) = eig.eigenvectors().col(src);
    out.singular_values(static_cast<Eigen::Index>(i)) = std::max(0.0, eig.eigenvalues()(src));
  }
  return out;
}

/// Index map that reverses time inside each of the three coordinate blocks.
inline Eigen::VectorXi time_reversal_permutation(std::size_t t_com) {
  Eigen::VectorXi perm(static_cast<Eigen::Index>(3 * t_com));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < t_com; ++t)
      perm(static_cast<Eigen::Index>(c * t_com + t)) = static_cast<int>(c * t_com + (t_com - 1 - t));
  return perm;
}

/// Rows of `m` permuted so that out.row(i) = m.row(perm(i)).
inline Eigen::MatrixXd permute_rows(const Eigen::MatrixXd& m, const Eigen::VectorXi& perm) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < perm.size(); ++i) out.row(i) = m.row(perm(i));
  return out;
}

/// Re-expresses D U diag(sigma) U^T D (D diagonal) with orthonormal
/// deviations: thin QR of D U diag(sqrt(sigma)), then SVD of the r x r factor.
inline LowRankCovariance rescale_rows(const LowRankCovariance& cov, const Eigen::VectorXd& row_scale) {
  const Eigen::Index r = cov.deviations.cols();
  const Eigen::MatrixXd loading =
      row_scale.asDiagonal() * cov.deviations * cov.singular_values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(loading);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(loading.rows(), r);
  const Eigen::MatrixXd upper = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(upper, Eigen::ComputeFullU);
  return {q * svd.matrixU(), svd.singularValues().array().square().matrix()};
}

/// Builds the mixture from scaled, runway-anchored cluster moments: rank-r
/// truncation, division of the up block by `up_factor`, and (landings)
/// reversal back to forward time.
inline TrajectoryModel fit_model(const cluster::ClusterStats& stats, std::size_t r, Mode mode, double up_factor = 10.0) {
  if (mode == Mode::unclassified) throw InvalidArgument("fit_model: mode must be landing or takeoff");
  if (!(up_factor > 0.0)) throw InvalidArgument("fit_model: up_factor must be positive");
  if (stats.k() == 0) throw InvalidArgument("fit_model: no clusters");
  const Eigen::Index dim = stats.centers.rows();
  if (dim % 3 != 0) throw InvalidArgument("fit_model: dimension is not a multiple of 3");
  const auto t_com = static_cast<std::size_t>(dim / 3);

  Eigen::VectorXd unscale = Eigen::VectorXd::Ones(dim);
  unscale.tail(static_cast<Eigen::Index>(t_com)).setConstant(1.0 / up_factor);
  const Eigen::VectorXi reverse = time_reversal_permutation(t_com);

  TrajectoryModel model;
  model.mode = mode;
  model.t_com = t_com;
  model.rank = r;
  model.up_factor = up_factor;
  for (std::size_t j = 0; j < stats.k(); ++j) {
    auto cov = truncate_covariance(stats.covariances[j], r);
    if (up_factor != 1.0) cov = rescale_rows(cov, unscale);
    ClusterModel c;
    c.weight = stats.weights(static_cast<Eigen::Index>(j));
    c.mean = unscale.asDiagonal() * stats.centers.col(static_cast<Eigen::Index>(j));
    c.deviations = std::move(cov.deviations);
    c.singular_values = std::move(cov.singular_values);
    if (mode == Mode::landing) {
      c.mean = permute_rows(c.mean, reverse);
      c.deviations = permute_rows(c.deviations, reverse);
    }
    model.clusters.push_back(std::move(c));
  }
  return model;
}

namespace detail {

/// Columns with singular value above the relative zero threshold.
inline std::vector<Eigen::Index> active_columns(const Eigen::VectorXd& sigma) {
  const double top = sigma.size() ? sigma.maxCoeff() : 0.0;
  std::vector<Eigen::Index> cols;
  for (Eigen::Index i = 0; i < sigma.size(); ++i)
    if (sigma(i) > 1e-12 * top && sigma(i) > 0.0) cols.push_back(i);
  return cols;
}

}  // namespace detail

inline constexpr double kSubspaceTolerance = 1e-6;

/// Log of the degenerate normal density restricted to mean + span(U): uses
/// the pseudo-determinant (product of nonzero singular values) and the
/// pseudo-inverse. Points off the support return -infinity.
inline double log_density(const ClusterModel& c, const Eigen::VectorXd& x,
                          double subspace_tol = kSubspaceTolerance) {
  if (x.size() != c.mean.size()) throw InvalidArgument("log_density: dimension mismatch");
  const auto active = detail::active_columns(c.singular_values);
  const Eigen::VectorXd d = x - c.mean;
  Eigen::VectorXd residual = d;
  double quad = 0.0;
  double log_pdet = 0.0;
  for (const auto i : active) {
    const double coef = c.deviations.col(i).dot(d);
    residual -= coef * c.deviations.col(i);
    quad += coef * coef / c.singular_values(i);
    log_pdet += std::log(c.singular_values(i));
  }
  if (residual.norm() > subspace_tol * d.norm()) return -std::numeric_limits<double>::infinity();
  const double rank = static_cast<double>(active.size());
  return -0.5 * (rank * std::log(2.0 * std::numbers::pi) + log_pdet + quad);
}

inline double log_density(const TrajectoryModel& model, std::size_t j, const Eigen::VectorXd& x) {
  return log_density(model.clusters.at(j), x);
}

struct LabeledSample {
  std::size_t cluster = 0;
  Trajectory trajectory;
};

/// Draws j ~ Categorical(pi), z ~ N(0, I_r) and emits mu_j + U_j sqrt(S_j) z.
inline std::vector<LabeledSample> sample_labeled(const TrajectoryModel& model, std::size_t count, std::uint64_t seed) {
  std::vector<LabeledSample> out;
  if (count == 0) return out;
  const Eigen::VectorXd w = model.weights();
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(w.data(), w.data() + w.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::MatrixXd> loadings;
  for (const auto& c : model.clusters) loadings.push_back(c.loading());
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t j = pick(rng);
    Eigen::VectorXd z(loadings[j].cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    out.push_back({j, cluster::devectorize(model.clusters[j].mean + loadings[j] * z, model.t_com)});
  }
  return out;
}

inline std::vector<Trajectory> sample(const TrajectoryModel& model, std::size_t count, std::uint64_t seed) {
  std::vector<Trajectory> out;
  out.reserve(count);
  for (auto& s : sample_labeled(model, count, seed)) out.push_back(std::move(s.trajectory));
  return out;
}

/// One observed position at a model time index.
struct Observation {
  std::size_t time = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

/// Everything the latent-space computations need for one cluster.
struct LatentSystem {
  Eigen::MatrixXd b;        // r x m, maps the latent z to observed coordinates
  Eigen::VectorXd residual;  // y - mu[obs]
};

namespace detail {

inline std::vector<Eigen::Index> observed_rows(const TrajectoryModel& model, std::span<const Observation> obs) {
  std::vector<Eigen::Index> rows;
  rows.reserve(3 * obs.size());
  for (const auto& o : obs) {
    if (o.time >= model.t_com) {
      throw InvalidArgument("observation time " + std::to_string(o.time) + " outside [0, T_com)");
    }
  }
  for (std::size_t c = 0; c < 3; ++c)
    for (const auto& o : obs) rows.push_back(static_cast<Eigen::Index>(c * model.t_com + o.time));
  return rows;
}

inline Eigen::VectorXd observed_values(std::span<const Observation> obs) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(3 * obs.size()));
  const auto m = static_cast<Eigen::Index>(obs.size());
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index c = 0; c < 3; ++c) y(c * m + i) = obs[static_cast<std::size_t>(i)].position(c);
  return y;
}

inline LatentSystem latent_system(const ClusterModel& c, const std::vector<Eigen::Index>& rows, const Eigen::VectorXd& y) {
  const Eigen::MatrixXd loading = c.loading();
  LatentSystem sys;
  sys.b.resize(loading.cols(), static_cast<Eigen::Index>(rows.size()));
  sys.residual.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    sys.b.col(kk) = loading.row(rows[k]).transpose();
    sys.residual(kk) = y(kk) - c.mean(rows[k]);
  }
  return sys;
}

/// log N(y; mu[obs], B^T B + noise I) via the r x r matrix I + B B^T / noise.
inline double log_marginal(const LatentSystem& sys, double noise_var) {
  const Eigen::Index r = sys.b.rows();
  const double m = static_cast<double>(sys.residual.size());
  const Eigen::MatrixXd g = Eigen::MatrixXd::Identity(r, r) + sys.b * sys.b.transpose() / noise_var;
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() != Eigen::Success) throw NumericalError("log_marginal: I + B B^T / s2 not positive definite");
  const Eigen::VectorXd be = sys.b * sys.residual;
  const Eigen::VectorXd w = llt.matrixL().solve(be);
  const double logdet = m * std::log(noise_var) + 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double quad = (sys.residual.squaredNorm() - w.squaredNorm() / noise_var) / noise_var;
  return -0.5 * (m * std::log(2.0 * std::numbers::pi) + logdet + quad);
}

inline void check_noise(double noise_var) {
  if (!(noise_var > 0.0) || !std::isfinite(noise_var)) throw InvalidArgument("observation noise variance must be positive");
}

}  // namespace detail

struct ClusterPosteriorWeights {
  Eigen::VectorXd responsibilities;
  double log_evidence = 0.0;  // log sum_j pi_j N(y; ...)
};

/// responsibility_j proportional to pi_j N(y_obs; mu_j[obs], Q_j[obs,obs] + s2 I),
/// normalized in log space.
inline ClusterPosteriorWeights posterior_cluster_weights(const TrajectoryModel& model, std::span<const Observation> obs,
                                                        double noise_var) {
  if (obs.empty()) throw InvalidArgument("posterior_clusters: no observations");
  detail::check_noise(noise_var);
  const auto rows = detail::observed_rows(model, obs);
  const Eigen::VectorXd y = detail::observed_values(obs);
  const double total_weight = model.weights().sum();
  const auto k = static_cast<Eigen::Index>(model.k());
  Eigen::VectorXd logp(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& c = model.clusters[static_cast<std::size_t>(j)];
    logp(j) = c.weight > 0.0
                  ? std::log(c.weight / total_weight) + detail::log_marginal(detail::latent_system(c, rows, y), noise_var)
                  : -std::numeric_limits<double>::infinity();
  }
  const double top = logp.maxCoeff();
  if (!std::isfinite(top)) throw NumericalError("posterior_clusters: every cluster has zero weight");
  Eigen::VectorXd p = (logp.array() - top).exp().matrix();
  const double z = p.sum();
  return {p / z, top + std::log(z)};
}

inline Eigen::VectorXd posterior_clusters(const TrajectoryModel& model, std::span<const Observation> obs, double noise_var) {
  return posterior_cluster_weights(model, obs, noise_var).responsibilities;
}

/// Gaussian posterior of one cluster given noisy observations. The
/// covariance is kept as a factor: cov = factor * factor^T.
struct ClusterPosterior {
  Eigen::VectorXd mean;        // all 3 T_com coordinates
  Eigen::MatrixXd factor;      // dim x r
  Eigen::VectorXd latent_mean;  // m_z
  Eigen::MatrixXd latent_cov;   // S

  [[nodiscard]] Eigen::MatrixXd covariance() const { return factor * factor.transpose(); }
};

/// Conditions cluster j in latent space: with B the latent-to-observation
/// map, S = (I + B B^T / s2)^-1 and m_z = S B (y - mu[obs]) / s2.
inline ClusterPosterior condition(const TrajectoryModel& model, std::size_t j, std::span<const Observation> obs,
                                  double noise_var) {
  const auto& c = model.clusters.at(j);
  const Eigen::MatrixXd loading = c.loading();
  const Eigen::Index r = loading.cols();
  ClusterPosterior post;
  if (obs.empty()) {
    post.latent_mean = Eigen::VectorXd::Zero(r);
    post.latent_cov = Eigen::MatrixXd::Identity(r, r);
    post.mean = c.mean;
    post.factor = loading;
    return post;
  }
  detail::check_noise(noise_var);
  const auto sys = detail::latent_system(c, detail::observed_rows(model, obs), detail::observed_values(obs));
  const Eigen::MatrixXd g = Eigen::MatrixXd::Identity(r, r) + sys.b * sys.b.transpose() / noise_var;
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() != Eigen::Success) throw NumericalError("condition: posterior precision not positive definite");
  post.latent_cov = llt.solve(Eigen::MatrixXd::Identity(r, r));
  post.latent_mean = llt.solve(sys.b * sys.residual) / noise_var;
  Eigen::LLT<Eigen::MatrixXd> cov_chol(post.latent_cov);
  if (cov_chol.info() != Eigen::Success) throw NumericalError("condition: posterior covariance not positive definite");
  post.mean = c.mean + loading * post.latent_mean;
  post.factor = loading * Eigen::MatrixXd(cov_chol.matrixL());
  return post;
}

struct Posterior {
  Eigen::VectorXd responsibilities;
  std::vector<ClusterPosterior> clusters;
  std::vector<Observation> observed;
};

inline Posterior posterior(const TrajectoryModel& model, std::span<const Observation> obs, double noise_var) {
  Posterior p;
  if (obs.empty()) {
    const Eigen::VectorXd w = model.weights();
    p.responsibilities = w / w.sum();
  } else {
    p.responsibilities = posterior_clusters(model, obs, noise_var);
  }
  for (std::size_t j = 0; j < model.k(); ++j) p.clusters.push_back(condition(model, j, obs, noise_var));
  p.observed.assign(obs.begin(), obs.end());
  return p;
}

/// Observations at consecutive model times offset, offset+1, ...
inline std::vector<Observation> as_observations(std::span<const Eigen::Vector3d> positions, std::size_t offset = 0) {
  std::vector<Observation> obs;
  obs.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) obs.push_back({offset + i, positions[i]});
  return obs;
}

struct Prediction {
  std::size_t cluster = 0;
  Eigen::VectorXd responsibilities;
  Trajectory mean;
};

/// Posterior mean of the most responsible cluster (ties to the lowest index).
inline Prediction predict(const TrajectoryModel& model, std::span<const Observation> obs, double noise_var) {
  if (obs.empty()) throw InvalidArgument("predict: need at least one observation");
  Prediction p;
  p.responsibilities = posterior_clusters(model, obs, noise_var);
  Eigen::Index best = 0;
  p.responsibilities.maxCoeff(&best);
  p.cluster = static_cast<std::size_t>(best);
  p.mean = cluster::devectorize(condition(model, p.cluster, obs, noise_var).mean, model.t_com);
  return p;
}

/// Prefix prediction: the positions are the first m model time steps.
inline Prediction predict_prefix(const TrajectoryModel& model, std::span<const Eigen::Vector3d> prefix, double noise_var) {
  const auto obs = as_observations(prefix);
  return predict(model, obs, noise_var);
}

struct OffsetSearch {
  std::size_t offset = 0;
  double log_evidence = -std::numeric_limits<double>::infinity();
};

/// Places m consecutive positions at every offset in [0, T_com - m] and
/// keeps the one with the largest mixture likelihood.
inline OffsetSearch best_offset(const TrajectoryModel& model, std::span<const Eigen::Vector3d> positions, double noise_var) {
  if (positions.empty() || positions.size() > model.t_com) {
    throw InvalidArgument("best_offset: need between 1 and T_com positions");
  }
  OffsetSearch best;
  for (std::size_t o = 0; o + positions.size() <= model.t_com; ++o) {
    const auto obs = as_observations(positions, o);
    const double ev = posterior_cluster_weights(model, obs, noise_var).log_evidence;
    if (ev > best.log_evidence) best = {o, ev};
  }
  return best;
}

/// Draws the cluster from the responsibilities and z ~ N(m_z, S). With no
/// observations this consumes the random stream exactly like sample().
inline std::vector<Trajectory> sample_posterior(const TrajectoryModel& model, std::span<const Observation> obs,
                                                double noise_var, std::size_t count, std::uint64_t seed) {
  std::vector<Trajectory> out;
  if (count == 0) return out;
  const Posterior post = posterior(model, obs, noise_var);
  const Eigen::VectorXd w = obs.empty() ? model.weights() : post.responsibilities;
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(w.data(), w.data() + w.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t j = pick(rng);
    const auto& cp = post.clusters[j];
    Eigen::VectorXd z(cp.factor.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    out.push_back(cluster::devectorize(cp.mean + cp.factor * z, model.t_com));
  }
  return out;
}

}  // namespace trajgmm::gmm
