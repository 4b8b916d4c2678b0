#pragma once

// Synthetic terminal-airspace ground truth: a known mixture of piecewise
// smooth departure/approach archetypes with low-rank deviations, and a
// noisy, gappy, multi-rate radar report stream in the measurement format.

#include <Eigen/Core>
#include <Eigen/QR>

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "trajgmm/error.hpp"
#include "trajgmm/geo.hpp"
#include "trajgmm/gmm.hpp"
#include "trajgmm/io.hpp"

namespace trajgmm::synth {

/// Shape of one principal deviation in runway-anchored time s:
/// ((s - onset)_+ / (T - 1 - onset))^power along a random, mostly lateral
/// direction, with per-step RMS `scale` meters.
struct DeviationProfile {
  double scale = 0.0;
  double onset = 0.0;
  double power = 0.0;
};

struct GroundTruthSpec {
  Mode mode = Mode::takeoff;
  std::size_t k_true = 4;
  std::size_t t_com = 60;
  // A late-growing deviation the first seconds say little about, and a
  // lateral divergence from the runway that they reveal.
  std::vector<DeviationProfile> deviations{{60.0, 15.0, 2.0}, {45.0, 0.0, 1.0}};
  double slope_min_deg = 3.0;  // glide slope (landing) or climb angle (takeoff)
  double slope_max_deg = 5.0;
  double noise_sigma = 10.0;   // isotropic measurement noise, m
  double dropout = 0.1;        // per interior second
  double duplicate_probability = 0.3;
  double jitter = 0.2;         // max |report time offset| within a second
  double up_factor = 10.0;
};

/// Parameters of one archetype, in runway-anchored time (s = 0 at the runway).
struct ArchetypeParams {
  double heading_deg = 0.0;     // direction of motion away from the runway
  double slope_deg = 3.0;
  double speed0 = 70.0;         // m/s at the runway
  double accel = 0.0;           // m/s^2 away from the runway
  double turn_start = 30.0;     // s
  double turn_rate_deg = 0.0;   // deg/s, signed
  double turn_angle_deg = 0.0;  // total, unsigned
  Eigen::Vector3d anchor = Eigen::Vector3d::Zero();
};

struct GroundTruth {
  gmm::TrajectoryModel model;  // model frame: meters, forward time
  std::vector<ArchetypeParams> archetypes;
};

/// Runway-anchored path: chord directions follow the heading schedule, and
/// height grows by tan(slope) times the horizontal chord length, so every
/// step has exactly the requested slope.
inline Eigen::MatrixXd archetype_path(const ArchetypeParams& p, std::size_t t_com) {
  Eigen::MatrixXd path(static_cast<Eigen::Index>(t_com), 3);
  Eigen::Vector3d pos = p.anchor;
  const double tan_slope = std::tan(geo::deg2rad(p.slope_deg));
  for (std::size_t s = 0; s < t_com; ++s) {
    path.row(static_cast<Eigen::Index>(s)) = pos.transpose();
    const double t = static_cast<double>(s) + 0.5;
    const double turned = std::min(std::max(0.0, t - p.turn_start) * std::abs(p.turn_rate_deg), p.turn_angle_deg);
    const double heading = geo::deg2rad(p.heading_deg + std::copysign(turned, p.turn_rate_deg));
    const double step = p.speed0 + p.accel * t;
    pos += Eigen::Vector3d(step * std::sin(heading), step * std::cos(heading), step * tan_slope);
  }
  return path;
}

inline GroundTruth make_ground_truth(const GroundTruthSpec& spec, std::uint64_t seed) {
  if (spec.mode == Mode::unclassified) throw InvalidArgument("ground truth: mode must be landing or takeoff");
  const std::size_t rank = spec.deviations.size();
  if (spec.k_true < 1 || spec.t_com < 5 || rank < 1 || rank > 3 * spec.t_com) {
    throw InvalidArgument("ground truth: invalid K, T_com or rank");
  }
  if (spec.slope_min_deg < 1.0 || spec.slope_max_deg > 10.0 || spec.slope_min_deg > spec.slope_max_deg) {
    throw InvalidArgument("ground truth: slope range must lie within [1, 10] degrees");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const bool landing = spec.mode == Mode::landing;
  const auto t_com = spec.t_com;
  const auto n = static_cast<Eigen::Index>(t_com);

  GroundTruth gt;
  auto& model = gt.model;
  model.mode = spec.mode;
  model.t_com = t_com;
  model.rank = rank;
  model.up_factor = spec.up_factor;

  const double base_heading = uniform(0.0, 360.0);
  std::vector<double> weights;
  for (std::size_t j = 0; j < spec.k_true; ++j) {
    ArchetypeParams a;
    a.heading_deg = base_heading + 360.0 * static_cast<double>(j) / static_cast<double>(spec.k_true) + uniform(-10.0, 10.0);
    a.slope_deg = uniform(spec.slope_min_deg, spec.slope_max_deg);
    a.speed0 = landing ? uniform(65.0, 75.0) : uniform(70.0, 80.0);
    a.accel = landing ? 0.0 : uniform(0.2, 0.4);
    a.turn_start = uniform(25.0, 40.0);
    a.turn_rate_deg = (unit(rng) < 0.5 ? -1.0 : 1.0) * uniform(1.5, 3.0);
    a.turn_angle_deg = uniform(20.0, 60.0);
    // Runways pass through the reference point so the report closest to it
    // is the runway end by a wide margin, whatever the noise.
    const double side = geo::deg2rad(a.heading_deg + 90.0);
    a.anchor = {0.0, 0.0, landing ? 15.0 : 10.0};

    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(3 * n, static_cast<Eigen::Index>(rank));
    for (std::size_t k = 0; k < rank; ++k) {
      const auto& prof = spec.deviations[k];
      Eigen::Vector3d dir(uniform(-1.0, 1.0), uniform(-1.0, 1.0), 0.1 * uniform(-1.0, 1.0));
      if (prof.onset <= 0.0) {
        // Along-track motion near the runway would move the closest report and
        // with it the track's time origin, so early deviations stay lateral.
        const double lateral = uniform(-1.0, 1.0) < 0.0 ? -1.0 : 1.0;
        dir = Eigen::Vector3d(lateral * std::sin(side), lateral * std::cos(side), 0.1 * uniform(-1.0, 1.0));
      }
      dir.normalize();
      for (Eigen::Index s = 0; s < n; ++s) {
        const double x = std::max(0.0, static_cast<double>(s) - prof.onset) /
                         std::max(1.0, static_cast<double>(n - 1) - prof.onset);
        const double shape = static_cast<double>(s) < prof.onset ? 0.0 : std::pow(x, prof.power);
        for (Eigen::Index c = 0; c < 3; ++c) raw(c * n + s, static_cast<Eigen::Index>(k)) = shape * dir(c);
      }
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    Eigen::MatrixXd u = qr.householderQ() * Eigen::MatrixXd::Identity(3 * n, static_cast<Eigen::Index>(rank));
    Eigen::VectorXd sigma(static_cast<Eigen::Index>(rank));
    for (std::size_t k = 0; k < rank; ++k) {
      const double amp = spec.deviations[k].scale;
      sigma(static_cast<Eigen::Index>(k)) = amp * amp * static_cast<double>(t_com);
    }
    // Keep the singular values non-increasing.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(rank));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&sigma](auto a, auto b) { return sigma(a) > sigma(b); });
    Eigen::MatrixXd u_sorted(u.rows(), u.cols());
    Eigen::VectorXd sigma_sorted(sigma.size());
    for (std::size_t k = 0; k < rank; ++k) {
      u_sorted.col(static_cast<Eigen::Index>(k)) = u.col(order[k]);
      sigma_sorted(static_cast<Eigen::Index>(k)) = sigma(order[k]);
    }
    u = std::move(u_sorted);
    sigma = std::move(sigma_sorted);

    const Eigen::MatrixXd path = archetype_path(a, t_com);
    Eigen::VectorXd mean(3 * n);
    for (Eigen::Index c = 0; c < 3; ++c) mean.segment(c * n, n) = path.col(c);
    if (landing) {
      const auto rev = gmm::time_reversal_permutation(t_com);
      mean = gmm::permute_rows(mean, rev);
      u = gmm::permute_rows(u, rev);
    }
    gmm::ClusterModel cm;
    cm.mean = std::move(mean);
    cm.deviations = std::move(u);
    cm.singular_values = std::move(sigma);
    weights.push_back(uniform(0.6, 1.4));
    model.clusters.push_back(std::move(cm));
    gt.archetypes.push_back(a);
  }
  double total = 0.0;
  for (double w : weights) total += w;
  for (std::size_t j = 0; j < weights.size(); ++j) model.clusters[j].weight = weights[j] / total;
  return gt;
}

struct FlightTruth {
  std::string target_id;
  double start_time = 0.0;
  Mode mode = Mode::unclassified;
  std::size_t cluster = 0;
  Trajectory trajectory;  // model frame, noiseless
};

struct RadarStream {
  std::string text;
  std::vector<FlightTruth> flights;
};

struct StreamOptions {
  double epoch = 1.3e9;          // unix time of the first flight
  double flight_spacing = 120.0;  // s between consecutive flight starts
  std::size_t id_pool = 64;      // target ids are reused modulo this
  std::size_t first_flight = 0;  // offsets ids and start times when merging streams
};

inline std::string flight_id(std::size_t index, std::size_t pool) { return "SYN" + std::to_string(index % pool); }

namespace detail {

/// Reports for one flight at 1 Hz with dropout (never the first or last
/// second), duplicated reports and sub-second jitter.
inline void emit_flight(std::ostream& out, const FlightTruth& f, const GroundTruthSpec& spec,
                        const geo::AirportReference& ref, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto rows = f.trajectory.rows();
  for (Eigen::Index t = 0; t < rows; ++t) {
    const bool interior = t > 0 && t + 1 < rows;
    if (interior && unit(rng) < spec.dropout) continue;
    const int reports = unit(rng) < spec.duplicate_probability ? 2 : 1;
    for (int r = 0; r < reports; ++r) {
      const double time = f.start_time + static_cast<double>(t) + spec.jitter * (2.0 * unit(rng) - 1.0);
      Eigen::Vector3d p = f.trajectory.row(t).transpose();
      for (int c = 0; c < 3; ++c) p(c) += spec.noise_sigma * normal(rng);
      const auto g = geo::enu_to_geodetic(geo::EnuPosition::from(p), ref);
      out << f.target_id << ',' << io::format_double(time) << ',' << io::format_double(g.latitude_deg) << ','
          << io::format_double(g.longitude_deg) << ',' << io::format_double(g.altitude_m) << '\n';
    }
  }
}

}  // namespace detail

/// Samples `n_flights` trajectories from the true model and serializes their
/// simulated reports in the measurement file format.
inline RadarStream emit_radar_stream(const gmm::TrajectoryModel& truth, std::size_t n_flights, const GroundTruthSpec& spec,
                                     const geo::AirportReference& ref, std::uint64_t seed, const StreamOptions& opts = {}) {
  RadarStream stream;
  const auto samples = gmm::sample_labeled(truth, n_flights, seed);
  std::mt19937_64 rng(reconstruct::mix_seed(seed, 0xA11CE));
  std::ostringstream out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t index = opts.first_flight + i;
    FlightTruth f{flight_id(index, opts.id_pool), opts.epoch + opts.flight_spacing * static_cast<double>(index),
                  truth.mode, samples[i].cluster, samples[i].trajectory};
    detail::emit_flight(out, f, spec, ref, rng);
    stream.flights.push_back(std::move(f));
  }
  stream.text = out.str();
  return stream;
}

/// Level flights crossing the airspace well away from the runways; the
/// classifier should discard them.
inline RadarStream emit_overflights(std::size_t n_flights, const GroundTruthSpec& spec, const geo::AirportReference& ref,
                                    std::uint64_t seed, const StreamOptions& opts = {}) {
  RadarStream stream;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::ostringstream out;
  for (std::size_t i = 0; i < n_flights; ++i) {
    const std::size_t index = opts.first_flight + i;
    const double heading = 2.0 * std::numbers::pi * unit(rng);
    const double offset = 3000.0 + 3000.0 * unit(rng);
    const double alt = 500.0 + 300.0 * unit(rng);
    const Eigen::Vector2d dir(std::sin(heading), std::cos(heading));
    const Eigen::Vector2d normal(dir.y(), -dir.x());
    Trajectory traj(static_cast<Eigen::Index>(spec.t_com), 3);
    for (std::size_t t = 0; t < spec.t_com; ++t) {
      const Eigen::Vector2d lateral = offset * normal + (80.0 * static_cast<double>(t) - 40.0 * static_cast<double>(spec.t_com)) * dir;
      traj.row(static_cast<Eigen::Index>(t)) << lateral.x(), lateral.y(), alt;
    }
    FlightTruth f{flight_id(index, opts.id_pool), opts.epoch + opts.flight_spacing * static_cast<double>(index),
                  Mode::unclassified, 0, std::move(traj)};
    detail::emit_flight(out, f, spec, ref, rng);
    stream.flights.push_back(std::move(f));
  }
  stream.text = out.str();
  return stream;
}

}  // namespace trajgmm::synth
