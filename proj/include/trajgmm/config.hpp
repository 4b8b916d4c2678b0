#pragma once

// Pipeline configuration: defaults, JSON loading and saving.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "trajgmm/cluster.hpp"
#include "trajgmm/error.hpp"
#include "trajgmm/eval.hpp"
#include "trajgmm/geo.hpp"
#include "trajgmm/ingest.hpp"
#include "trajgmm/reconstruct.hpp"

namespace trajgmm {

struct AirportConfig {
  double latitude = 40.6413;
  double longitude = -73.7781;
  double altitude = 4.0;
  double runway_radius = 2000.0;
  double lateral_bound = 5.0 * geo::kMetersPerNauticalMile;
  double vertical_bound = 3000.0 * geo::kMetersPerFoot;

  [[nodiscard]] geo::AirportReference reference() const {
    return geo::AirportReference({latitude, longitude, altitude}, runway_radius, lateral_bound, vertical_bound);
  }
};

struct PipelineConfig {
  AirportConfig airport;
  ingest::ClassificationRules classification;
  double gap_threshold = 30.0;

  Mode mode = Mode::takeoff;
  double up_factor = 10.0;
  std::optional<std::size_t> t_com;
  double short_slack = 30.0;
  std::vector<reconstruct::Regularization> lambda_grid = reconstruct::default_lambda_grid();
  double holdout_fraction = 0.25;

  std::size_t k = 10;
  std::size_t rank = 5;
  std::vector<std::size_t> k_grid;  // empty: use k
  std::vector<std::size_t> rank_grid;
  eval::Objective objective = eval::Objective::prediction;
  cluster::KMeansOptions kmeans;

  double split_fraction = 0.75;
  double obs_noise = 15.0;  // standard deviation, m
  std::size_t prefix_length = 10;
  std::size_t n_samples = 1000;
  eval::HistogramOptions histogram;
  std::uint64_t seed = 0;

  [[nodiscard]] double noise_var() const { return obs_noise * obs_noise; }
  [[nodiscard]] std::vector<std::size_t> effective_k_grid() const { return k_grid.empty() ? std::vector{k} : k_grid; }
  [[nodiscard]] std::vector<std::size_t> effective_rank_grid() const {
    return rank_grid.empty() ? std::vector{rank} : rank_grid;
  }

  [[nodiscard]] eval::TrainOptions train_options() const { return {mode, up_factor, seed, kmeans}; }
  [[nodiscard]] eval::EvalOptions eval_options() const {
    return {prefix_length, noise_var(), n_samples, reconstruct::mix_seed(seed, 7), histogram};
  }
};

namespace detail {

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& value) {
  if (j.contains(key)) value = j.at(key).get<T>();
}

}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    if (j.contains("airport")) {
      const auto& a = j.at("airport");
      detail::read_if(a, "latitude", c.airport.latitude);
      detail::read_if(a, "longitude", c.airport.longitude);
      detail::read_if(a, "altitude", c.airport.altitude);
      detail::read_if(a, "runway_radius", c.airport.runway_radius);
      detail::read_if(a, "lateral_bound", c.airport.lateral_bound);
      detail::read_if(a, "vertical_bound", c.airport.vertical_bound);
    }
    if (j.contains("classification")) {
      const auto& r = j.at("classification");
      detail::read_if(r, "vertical_rate_fpm", c.classification.vertical_rate_fpm);
      detail::read_if(r, "landing_fraction", c.classification.landing_fraction);
      detail::read_if(r, "takeoff_fraction", c.classification.takeoff_fraction);
    }
    detail::read_if(j, "gap_threshold", c.gap_threshold);
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    detail::read_if(j, "up_factor", c.up_factor);
    if (j.contains("t_com") && !j.at("t_com").is_null()) c.t_com = j.at("t_com").get<std::size_t>();
    detail::read_if(j, "short_slack", c.short_slack);
    if (j.contains("lambda_values")) {
      const auto values = j.at("lambda_values").get<std::vector<double>>();
      c.lambda_grid.clear();
      for (double l1 : values)
        for (double l2 : values) c.lambda_grid.push_back({l1, l2});
    }
    detail::read_if(j, "holdout_fraction", c.holdout_fraction);
    detail::read_if(j, "k", c.k);
    detail::read_if(j, "rank", c.rank);
    detail::read_if(j, "k_grid", c.k_grid);
    detail::read_if(j, "rank_grid", c.rank_grid);
    if (j.contains("objective")) c.objective = eval::parse_objective(j.at("objective").get<std::string>());
    if (j.contains("kmeans")) {
      const auto& k = j.at("kmeans");
      detail::read_if(k, "max_iters", c.kmeans.max_iters);
      detail::read_if(k, "tol", c.kmeans.tol);
      detail::read_if(k, "restarts", c.kmeans.restarts);
    }
    detail::read_if(j, "split_fraction", c.split_fraction);
    detail::read_if(j, "obs_noise", c.obs_noise);
    detail::read_if(j, "prefix_length", c.prefix_length);
    detail::read_if(j, "n_samples", c.n_samples);
    if (j.contains("histogram")) {
      const auto& h = j.at("histogram");
      detail::read_if(h, "position_bins", c.histogram.position_bins);
      detail::read_if(h, "position_extent", c.histogram.position_extent);
      detail::read_if(h, "feature_bins", c.histogram.feature_bins);
      detail::read_if(h, "alpha", c.histogram.alpha);
    }
    detail::read_if(j, "seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  return c;
}

inline PipelineConfig read_config(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("config: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace trajgmm
