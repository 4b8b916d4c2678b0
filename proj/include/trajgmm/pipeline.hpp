#pragma once

// End-to-end stages shared by the command-line tool and the acceptance
// suite: ingest, train, predict and evaluate.

#include <nlohmann/json.hpp>

#include <cmath>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajgmm/cluster.hpp"
#include "trajgmm/config.hpp"
#include "trajgmm/eval.hpp"
#include "trajgmm/gmm.hpp"
#include "trajgmm/ingest.hpp"
#include "trajgmm/io.hpp"
#include "trajgmm/reconstruct.hpp"

namespace trajgmm::pipeline {

struct IngestOutcome {
  std::vector<ingest::RawTrack> tracks;  // canonical, unscaled, mode set
  std::size_t records = 0;
  std::size_t raw_tracks = 0;
  std::size_t landings = 0;
  std::size_t takeoffs = 0;
  std::size_t discards = 0;
  std::vector<ingest::Diagnostic> diagnostics;

  [[nodiscard]] nlohmann::json report() const {
    nlohmann::json diags = nlohmann::json::array();
    for (const auto& d : diagnostics) diags.push_back({{"line", d.line}, {"message", d.message}});
    return {{"records", records},   {"raw_tracks", raw_tracks}, {"landings", landings},
            {"takeoffs", takeoffs}, {"discards", discards},     {"diagnostics", diags}};
  }
};

inline IngestOutcome run_ingest(const ingest::ParseResult& parsed, const PipelineConfig& cfg) {
  IngestOutcome out;
  out.records = parsed.records.size();
  out.diagnostics = parsed.diagnostics;
  const auto ref = cfg.airport.reference();
  const auto raw = ingest::extract_tracks(parsed.records, ref, cfg.gap_threshold);
  out.raw_tracks = raw.size();
  for (const auto& t : raw) {
    if (t.measurements.size() < 2 || !(t.duration() > 0.0)) {
      ++out.discards;
      continue;
    }
    const auto cls = ingest::classify_track(t, ref, cfg.classification);
    if (cls == ingest::TrackClass::discard) {
      ++out.discards;
      continue;
    }
    const Mode mode = cls == ingest::TrackClass::landing ? Mode::landing : Mode::takeoff;
    try {
      out.tracks.push_back(ingest::canonicalize(t, mode));
      ++(mode == Mode::landing ? out.landings : out.takeoffs);
    } catch (const InvalidArgument&) {
      ++out.discards;
    }
  }
  return out;
}

inline IngestOutcome run_ingest(std::istream& in, const PipelineConfig& cfg) {
  return run_ingest(ingest::parse_measurements(in), cfg);
}

struct TrainOutcome {
  gmm::TrajectoryModel model;
  std::size_t t_com = 0;
  std::size_t tracks_in_mode = 0;
  reconstruct::FitBatch fits;
  std::vector<Trajectory> train;    // training frame
  std::vector<Trajectory> heldout;  // model frame
  eval::Selection selection;
  std::vector<double> kmeans_objective;

  [[nodiscard]] nlohmann::json report(const PipelineConfig& cfg) const {
    nlohmann::json weights = nlohmann::json::array();
    for (const auto& c : model.clusters) weights.push_back(c.weight);
    nlohmann::json table = nlohmann::json::array();
    for (const auto& r : selection.table) table.push_back({{"K", r.k}, {"r", r.r}, {"score", r.score}});
    std::size_t fallback = 0;
    for (const auto& f : fits.fits) fallback += f.used_fallback ? 1 : 0;
    return {{"mode", std::string(to_string(model.mode))},
            {"T_com", t_com},
            {"tracks_in_mode", tracks_in_mode},
            {"reconstructed", fits.fits.size()},
            {"dropped_short", fits.dropped_short.size()},
            {"solver_failures", fits.failures.size()},
            {"lambda_fallbacks", fallback},
            {"train", train.size()},
            {"heldout", heldout.size()},
            {"K", model.k()},
            {"r", model.rank},
            {"objective", std::string(eval::to_string(cfg.objective))},
            {"score_table", table},
            {"kmeans_objective", kmeans_objective},
            {"pi", weights}};
  }
};

/// Reconstructs the tracks of the configured mode, splits them, selects
/// (K, r) on the held-out part when a grid is configured, and fits the model
/// on the training part.
inline TrainOutcome run_train(const std::vector<ingest::RawTrack>& tracks, const PipelineConfig& cfg) {
  TrainOutcome out;
  std::vector<ingest::RawTrack> scaled;
  for (const auto& t : tracks)
    if (t.mode == cfg.mode) scaled.push_back(ingest::scale(t, cfg.up_factor));
  out.tracks_in_mode = scaled.size();
  if (scaled.empty()) throw InvalidArgument("train: no " + std::string(to_string(cfg.mode)) + " tracks");
  out.t_com = cfg.t_com ? *cfg.t_com : reconstruct::select_common_length(scaled);

  reconstruct::FitOptions fit_opts;
  fit_opts.short_slack = cfg.short_slack;
  fit_opts.grid = cfg.lambda_grid;
  fit_opts.holdout_fraction = cfg.holdout_fraction;
  fit_opts.seed = cfg.seed;
  out.fits = reconstruct::filter_and_fit(scaled, out.t_com, fit_opts);
  const auto trajs = out.fits.trajectories();
  if (trajs.empty()) throw InvalidArgument("train: no trajectory survived reconstruction");

  const auto split = eval::train_test_split(trajs.size(), cfg.split_fraction, reconstruct::mix_seed(cfg.seed, 1));
  out.train = eval::take(trajs, split.train);
  const auto heldout_training_frame = eval::take(trajs, split.heldout);
  out.heldout = eval::to_model_frame(heldout_training_frame, cfg.mode, cfg.up_factor);
  if (out.train.empty()) throw InvalidArgument("train: training split is empty");

  const auto k_grid = cfg.effective_k_grid();
  const auto r_grid = cfg.effective_rank_grid();
  const auto topts = cfg.train_options();
  if (k_grid.size() * r_grid.size() > 1) {
    if (heldout_training_frame.empty()) throw InvalidArgument("train: grid selection needs a held-out split");
    out.selection = eval::select_hyperparams(out.train, heldout_training_frame, k_grid, r_grid, cfg.objective, topts,
                                             cfg.eval_options());
    out.model = out.selection.model;
  } else {
    auto trained = eval::train(out.train, k_grid.front(), r_grid.front(), topts);
    out.model = std::move(trained.model);
    out.kmeans_objective = trained.kmeans.objective_history;
    out.selection.k = k_grid.front();
    out.selection.r = r_grid.front();
    if (!out.heldout.empty()) {
      out.selection.table.push_back(
          {out.selection.k, out.selection.r, eval::score_model(out.model, out.heldout, cfg.objective, cfg.eval_options())});
    }
  }
  return out;
}

struct PredictOutcome {
  gmm::Prediction prediction;
  std::size_t offset = 0;
  std::size_t last_observed = 0;
  std::size_t nearest_runway_step = 0;
  double seconds_to_runway = 0.0;
  double exit_bearing_deg = 0.0;

  [[nodiscard]] nlohmann::json report() const {
    return {{"cluster", prediction.cluster},
            {"responsibilities", std::vector<double>(prediction.responsibilities.data(),
                                                     prediction.responsibilities.data() + prediction.responsibilities.size())},
            {"offset", offset},
            {"nearest_runway_step", nearest_runway_step},
            {"seconds_to_runway", seconds_to_runway},
            {"exit_bearing_deg", exit_bearing_deg}};
  }
};

/// Posterior-mean prediction plus the derived answers: the model step
/// closest to the runways (and its distance in seconds from the last
/// observation) and the bearing of the final predicted position.
inline PredictOutcome run_predict(const gmm::TrajectoryModel& model, std::vector<gmm::Observation> obs, double noise_var,
                                  bool offset_search) {
  if (obs.empty()) throw InvalidArgument("predict: no observations");
  PredictOutcome out;
  if (offset_search) {
    std::vector<Eigen::Vector3d> positions;
    for (const auto& o : obs) positions.push_back(o.position);
    out.offset = gmm::best_offset(model, positions, noise_var).offset;
    obs = gmm::as_observations(positions, out.offset);
  }
  out.prediction = gmm::predict(model, obs, noise_var);
  for (const auto& o : obs) out.last_observed = std::max(out.last_observed, o.time);
  const auto& mean = out.prediction.mean;
  Eigen::Index nearest = 0;
  mean.rowwise().norm().minCoeff(&nearest);
  out.nearest_runway_step = static_cast<std::size_t>(nearest);
  out.seconds_to_runway = static_cast<double>(nearest) - static_cast<double>(out.last_observed);
  const auto last = mean.row(mean.rows() - 1);
  double bearing = geo::rad2deg(std::atan2(last(0), last(1)));
  out.exit_bearing_deg = bearing < 0.0 ? bearing + 360.0 : bearing;
  return out;
}

struct EvaluateRow {
  std::string metric;
  double value = 0.0;
};

inline std::vector<EvaluateRow> run_evaluate(const gmm::TrajectoryModel& model, const std::vector<Trajectory>& heldout,
                                             eval::Objective objective, const PipelineConfig& cfg) {
  const auto opts = cfg.eval_options();
  if (objective == eval::Objective::generation) {
    const auto s = eval::generation_score(model, heldout, opts.n_samples, opts.sample_seed, opts.histogram);
    return {{"kl_position", s.position},
            {"kl_longitudinal_speed", s.longitudinal_speed},
            {"kl_vertical_speed", s.vertical_speed},
            {"kl_turn_rate", s.turn_rate},
            {"score", s.mean()}};
  }
  return {{"score", eval::prediction_rms(model, heldout, opts.prefix_length, opts.noise_var)}};
}

inline void write_evaluation(std::ostream& out, const gmm::TrajectoryModel& model, eval::Objective objective,
                             const std::vector<EvaluateRow>& rows) {
  out << "K,r,objective,metric,value\n";
  for (const auto& r : rows) {
    out << model.k() << ',' << model.rank << ',' << eval::to_string(objective) << ',' << r.metric << ','
        << io::format_double(r.value) << '\n';
  }
}

}  // namespace trajgmm::pipeline
