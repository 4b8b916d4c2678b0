// trajgmm: command-line pipeline from radar reports to a trajectory mixture
// model, with sampling, prediction and evaluation.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "trajgmm/trajgmm.hpp"

namespace {

using namespace trajgmm;

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  if (path.empty()) return;
  auto out = open_out(path);
  out << j.dump(1) << '\n';
}

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<std::size_t> rank;
  std::optional<std::size_t> tcom;
  std::optional<double> obs_noise;
  std::optional<std::string> mode;
};

PipelineConfig load_config(const GlobalFlags& g) {
  PipelineConfig cfg;
  if (!g.config.empty()) {
    auto in = open_in(g.config);
    cfg = read_config(in);
  }
  if (g.seed) cfg.seed = *g.seed;
  if (g.k) {
    cfg.k = *g.k;
    cfg.k_grid.clear();
  }
  if (g.rank) {
    cfg.rank = *g.rank;
    cfg.rank_grid.clear();
  }
  if (g.tcom) cfg.t_com = *g.tcom;
  if (g.obs_noise) cfg.obs_noise = *g.obs_noise;
  if (g.mode) cfg.mode = parse_mode(*g.mode);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-mixture trajectory models for terminal airspace"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--k", g.k, "Number of clusters (overrides any K grid)");
  app.add_option("--rank", g.rank, "Number of principal deviations (overrides any rank grid)");
  app.add_option("--tcom", g.tcom, "Common trajectory length in seconds");
  app.add_option("--obs-noise", g.obs_noise, "Observation noise standard deviation in meters");
  app.add_option("--mode", g.mode, "landing or takeoff")->check(CLI::IsMember({"landing", "takeoff"}));

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Parse reports, split, classify and canonicalize tracks");
  std::string meas_path, tracks_out, ingest_report;
  ingest_cmd->add_option("measurements", meas_path, "Measurement file")->required();
  ingest_cmd->add_option("-o,--out", tracks_out, "Canonical track file")->required();
  ingest_cmd->add_option("--report", ingest_report, "JSON report");

  // train
  auto* train_cmd = app.add_subcommand("train", "Reconstruct, cluster and fit the mixture model");
  std::string tracks_in, model_out, train_report, heldout_out, trajectories_out;
  std::vector<std::size_t> k_grid, rank_grid;
  std::optional<std::string> objective_flag;
  train_cmd->add_option("tracks", tracks_in, "Canonical track file")->required();
  train_cmd->add_option("-o,--out", model_out, "Model file")->required();
  train_cmd->add_option("--report", train_report, "JSON training report");
  train_cmd->add_option("--heldout-out", heldout_out, "Held-out trajectories (model frame)");
  train_cmd->add_option("--trajectories-out", trajectories_out, "Training trajectories (scaled frame)");
  train_cmd->add_option("--k-grid", k_grid, "Candidate K values");
  train_cmd->add_option("--rank-grid", rank_grid, "Candidate r values");
  train_cmd->add_option("--objective", objective_flag, "generation or prediction")
      ->check(CLI::IsMember({"generation", "prediction"}));

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "Draw trajectories from a model");
  std::string sample_model, sample_out;
  std::size_t sample_count = 0;
  sample_cmd->add_option("model", sample_model, "Model file")->required();
  sample_cmd->add_option("--count", sample_count, "Number of trajectories")->required();
  sample_cmd->add_option("-o,--out", sample_out, "Trajectory file")->required();

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Posterior-mean prediction from observed positions");
  std::string predict_model, obs_in, predict_out, predict_report, posterior_samples_out;
  bool offset_search = false;
  std::size_t posterior_count = 0;
  predict_cmd->add_option("model", predict_model, "Model file")->required();
  predict_cmd->add_option("observations", obs_in, "Rows 'time_index,east,north,up'")->required();
  predict_cmd->add_option("-o,--out", predict_out, "Predicted trajectory file")->required();
  predict_cmd->add_option("--report", predict_report, "JSON report with responsibilities and answers");
  predict_cmd->add_flag("--offset-search", offset_search, "Search the time offset of the observations");
  predict_cmd->add_option("--posterior-samples", posterior_count, "Number of posterior samples to draw");
  predict_cmd->add_option("--posterior-out", posterior_samples_out, "Posterior sample trajectory file");

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a model on held-out trajectories");
  std::string eval_model, eval_heldout, eval_out, eval_objective = "prediction";
  evaluate_cmd->add_option("model", eval_model, "Model file")->required();
  evaluate_cmd->add_option("heldout", eval_heldout, "Held-out trajectory file (model frame)")->required();
  evaluate_cmd->add_option("--objective", eval_objective, "generation or prediction")
      ->check(CLI::IsMember({"generation", "prediction"}));
  evaluate_cmd->add_option("-o,--out", eval_out, "Score table")->required();

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic measurement file and its true models");
  std::string synth_out, synth_truth_prefix;
  std::size_t synth_flights = 200, synth_overflights = 0, synth_k = 4;
  std::string synth_modes = "both";
  double synth_noise = 10.0, synth_dropout = 0.1;
  synth_cmd->add_option("-o,--out", synth_out, "Measurement file")->required();
  synth_cmd->add_option("--truth-prefix", synth_truth_prefix, "Write true models to <prefix>_<mode>.json");
  synth_cmd->add_option("--flights", synth_flights, "Flights per mode");
  synth_cmd->add_option("--overflights", synth_overflights, "Level overflights (classified as discards)");
  synth_cmd->add_option("--true-k", synth_k, "Clusters per mode");
  synth_cmd->add_option("--modes", synth_modes, "landing, takeoff or both")
      ->check(CLI::IsMember({"landing", "takeoff", "both"}));
  synth_cmd->add_option("--noise", synth_noise, "Measurement noise (m)");
  synth_cmd->add_option("--dropout", synth_dropout, "Per-second dropout probability");

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = load_config(g);

    if (*ingest_cmd) {
      auto in = open_in(meas_path);
      const auto outcome = pipeline::run_ingest(in, cfg);
      for (const auto& d : outcome.diagnostics) std::cerr << meas_path << ':' << d.line << ": " << d.message << '\n';
      auto out = open_out(tracks_out);
      io::write_tracks(out, outcome.tracks);
      write_json(ingest_report, outcome.report());
      std::cerr << "landings " << outcome.landings << ", takeoffs " << outcome.takeoffs << ", discards "
                << outcome.discards << '\n';
    } else if (*train_cmd) {
      if (!k_grid.empty()) cfg.k_grid = k_grid;
      if (!rank_grid.empty()) cfg.rank_grid = rank_grid;
      if (objective_flag) cfg.objective = eval::parse_objective(*objective_flag);
      auto in = open_in(tracks_in);
      const auto tracks = io::read_tracks(in);
      const auto outcome = pipeline::run_train(tracks, cfg);
      for (const auto& f : outcome.fits.failures) std::cerr << "track " << f.source_index << ": " << f.message << '\n';
      auto out = open_out(model_out);
      io::write_model(out, outcome.model);
      write_json(train_report, outcome.report(cfg));
      if (!heldout_out.empty()) {
        auto h = open_out(heldout_out);
        io::write_trajectories(h, outcome.heldout, outcome.t_com);
      }
      if (!trajectories_out.empty()) {
        auto t = open_out(trajectories_out);
        io::write_trajectories(t, outcome.train, outcome.t_com);
      }
      std::cerr << "trained " << to_string(outcome.model.mode) << " model: T_com " << outcome.t_com << ", K "
                << outcome.model.k() << ", r " << outcome.model.rank << '\n';
    } else if (*sample_cmd) {
      auto in = open_in(sample_model);
      const auto model = io::read_model(in);
      auto out = open_out(sample_out);
      io::write_trajectories(out, gmm::sample(model, sample_count, cfg.seed), model.t_com);
    } else if (*predict_cmd) {
      auto min = open_in(predict_model);
      const auto model = io::read_model(min);
      auto oin = open_in(obs_in);
      const auto obs = io::read_observations(oin);
      const auto outcome = pipeline::run_predict(model, obs, cfg.noise_var(), offset_search);
      auto out = open_out(predict_out);
      io::write_trajectories(out, {outcome.prediction.mean}, model.t_com);
      write_json(predict_report, outcome.report());
      if (!posterior_samples_out.empty()) {
        std::vector<gmm::Observation> shifted = obs;
        for (std::size_t i = 0; i < shifted.size() && offset_search; ++i) shifted[i].time = outcome.offset + i;
        auto ps = open_out(posterior_samples_out);
        io::write_trajectories(ps, gmm::sample_posterior(model, shifted, cfg.noise_var(), posterior_count, cfg.seed),
                               model.t_com);
      }
    } else if (*evaluate_cmd) {
      auto min = open_in(eval_model);
      const auto model = io::read_model(min);
      auto hin = open_in(eval_heldout);
      const auto batch = io::read_trajectories(hin);
      const auto objective = eval::parse_objective(eval_objective);
      const auto rows = pipeline::run_evaluate(model, batch.trajectories, objective, cfg);
      auto out = open_out(eval_out);
      pipeline::write_evaluation(out, model, objective, rows);
    } else if (*synth_cmd) {
      const auto ref = cfg.airport.reference();
      std::string text;
      std::size_t next_flight = 0;
      for (const Mode mode : {Mode::landing, Mode::takeoff}) {
        if (synth_modes != "both" && synth_modes != to_string(mode)) continue;
        synth::GroundTruthSpec spec;
        spec.mode = mode;
        spec.k_true = synth_k;
        spec.noise_sigma = synth_noise;
        spec.dropout = synth_dropout;
        if (cfg.t_com) spec.t_com = *cfg.t_com;
        if (mode == Mode::takeoff) {
          spec.slope_min_deg = 5.0;
          spec.slope_max_deg = 7.0;
        }
        const auto truth = synth::make_ground_truth(spec, reconstruct::mix_seed(cfg.seed, mode == Mode::landing ? 1 : 2));
        synth::StreamOptions sopts;
        sopts.first_flight = next_flight;
        const auto stream = synth::emit_radar_stream(truth.model, synth_flights, spec, ref,
                                                     reconstruct::mix_seed(cfg.seed, mode == Mode::landing ? 3 : 4), sopts);
        next_flight += synth_flights;
        text += stream.text;
        if (!synth_truth_prefix.empty()) {
          auto out = open_out(synth_truth_prefix + "_" + std::string(to_string(mode)) + ".json");
          io::write_model(out, truth.model);
        }
      }
      if (synth_overflights > 0) {
        synth::GroundTruthSpec spec;
        spec.noise_sigma = synth_noise;
        spec.dropout = synth_dropout;
        synth::StreamOptions sopts;
        sopts.first_flight = next_flight;
        text += synth::emit_overflights(synth_overflights, spec, ref, reconstruct::mix_seed(cfg.seed, 5), sopts).text;
      }
      auto out = open_out(synth_out);
      out << "# target_id,unix_time_seconds,lat_deg,lon_deg,alt_m\n" << text;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
