#pragma once

// Text file formats: trajectory batches, canonical track files, score
// tables and the JSON model file.

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "trajgmm/error.hpp"
#include "trajgmm/eval.hpp"
#include "trajgmm/gmm.hpp"
#include "trajgmm/ingest.hpp"

namespace trajgmm::io {

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw IoError("format_double: conversion failed");
  return {buf.data(), ptr};
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double to_double(const std::string& s, std::size_t lineno) {
  const auto v = ingest::detail::parse_double(s);
  if (!v) throw IoError("line " + std::to_string(lineno) + ": bad number '" + s + "'");
  return *v;
}

inline std::size_t to_size(const std::string& s, std::size_t lineno) {
  const auto v = to_double(s, lineno);
  if (v < 0 || v != std::floor(v)) throw IoError("line " + std::to_string(lineno) + ": expected a count");
  return static_cast<std::size_t>(v);
}

inline bool next_line(std::istream& in, std::string& line, std::size_t& lineno) {
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = ingest::detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    line = std::string(t);
    return true;
  }
  return false;
}

}  // namespace detail

/// Header `T_com,count`, then T_com rows `east,north,up` per trajectory.
/// No trajectories, no output.
inline void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajs, std::size_t t_com) {
  if (trajs.empty()) return;
  out << t_com << ',' << trajs.size() << '\n';
  for (const auto& t : trajs) {
    if (static_cast<std::size_t>(t.rows()) != t_com) throw InvalidArgument("write_trajectories: length mismatch");
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      out << format_double(t(i, 0)) << ',' << format_double(t(i, 1)) << ',' << format_double(t(i, 2)) << '\n';
  }
}

struct TrajectoryBatch {
  std::size_t t_com = 0;
  std::vector<Trajectory> trajectories;
};

inline TrajectoryBatch read_trajectories(std::istream& in) {
  TrajectoryBatch batch;
  std::string line;
  std::size_t lineno = 0;
  if (!detail::next_line(in, line, lineno)) return batch;
  const auto header = detail::split_csv(line);
  if (header.size() != 2) throw IoError("trajectory file: header must be 'T_com,count'");
  batch.t_com = detail::to_size(header[0], lineno);
  const auto count = detail::to_size(header[1], lineno);
  for (std::size_t k = 0; k < count; ++k) {
    Trajectory t(static_cast<Eigen::Index>(batch.t_com), 3);
    for (std::size_t i = 0; i < batch.t_com; ++i) {
      if (!detail::next_line(in, line, lineno)) throw IoError("trajectory file: truncated");
      const auto f = detail::split_csv(line);
      if (f.size() != 3) throw IoError("line " + std::to_string(lineno) + ": expected 'east,north,up'");
      for (int c = 0; c < 3; ++c) t(static_cast<Eigen::Index>(i), c) = detail::to_double(f[static_cast<std::size_t>(c)], lineno);
    }
    batch.trajectories.push_back(std::move(t));
  }
  return batch;
}

/// Canonical track file: `track,<id>,<mode>,<start_time>,<count>` followed by
/// `count` rows of `time,east,north,up` (meters, unscaled).
inline void write_tracks(std::ostream& out, const std::vector<ingest::RawTrack>& tracks) {
  out << "# trajgmm tracks v1\n";
  for (const auto& t : tracks) {
    out << "track," << t.target_id << ',' << to_string(t.mode) << ',' << format_double(t.start_time) << ','
        << t.measurements.size() << '\n';
    for (const auto& m : t.measurements) {
      out << format_double(m.time) << ',' << format_double(m.position.east) << ',' << format_double(m.position.north)
          << ',' << format_double(m.position.up) << '\n';
    }
  }
}

inline std::vector<ingest::RawTrack> read_tracks(std::istream& in) {
  std::vector<ingest::RawTrack> tracks;
  std::string line;
  std::size_t lineno = 0;
  while (detail::next_line(in, line, lineno)) {
    const auto h = detail::split_csv(line);
    if (h.size() != 5 || h[0] != "track") throw IoError("line " + std::to_string(lineno) + ": expected a track header");
    ingest::RawTrack t;
    t.target_id = h[1];
    t.mode = parse_mode(h[2]);
    t.start_time = detail::to_double(h[3], lineno);
    const auto count = detail::to_size(h[4], lineno);
    for (std::size_t i = 0; i < count; ++i) {
      if (!detail::next_line(in, line, lineno)) throw IoError("track file: truncated");
      const auto f = detail::split_csv(line);
      if (f.size() != 4) throw IoError("line " + std::to_string(lineno) + ": expected 'time,east,north,up'");
      t.measurements.push_back({detail::to_double(f[0], lineno),
                                {detail::to_double(f[1], lineno), detail::to_double(f[2], lineno),
                                 detail::to_double(f[3], lineno)}});
    }
    tracks.push_back(std::move(t));
  }
  return tracks;
}

/// Observations for prediction: rows `time_index,east,north,up`.
inline std::vector<gmm::Observation> read_observations(std::istream& in) {
  std::vector<gmm::Observation> obs;
  std::string line;
  std::size_t lineno = 0;
  while (detail::next_line(in, line, lineno)) {
    const auto f = detail::split_csv(line);
    if (f.size() != 4) throw IoError("line " + std::to_string(lineno) + ": expected 'time_index,east,north,up'");
    obs.push_back({detail::to_size(f[0], lineno),
                   {detail::to_double(f[1], lineno), detail::to_double(f[2], lineno), detail::to_double(f[3], lineno)}});
  }
  return obs;
}

inline void write_score_table(std::ostream& out, const std::vector<eval::ScoreRow>& rows, eval::Objective objective) {
  out << "K,r,objective,score\n";
  for (const auto& r : rows) out << r.k << ',' << r.r << ',' << to_string(objective) << ',' << format_double(r.score) << '\n';
}

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd json_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json model_to_json(const gmm::TrajectoryModel& model) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : model.clusters) {
    const Eigen::MatrixXd& u = c.deviations;
    clusters.push_back({{"pi", c.weight},
                        {"mu", vector_json(c.mean)},
                        {"sigma", vector_json(c.singular_values)},
                        {"U",
                         {{"rows", u.rows()},
                          {"cols", u.cols()},
                          {"data", std::vector<double>(u.data(), u.data() + u.size())}}}});
  }
  return {{"format_version", kModelFormatVersion},
          {"mode", std::string(to_string(model.mode))},
          {"T_com", model.t_com},
          {"r", model.rank},
          {"up_factor", model.up_factor},
          {"clusters", std::move(clusters)}};
}

inline gmm::TrajectoryModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) throw IoError("model file: unsupported format_version");
    gmm::TrajectoryModel m;
    m.mode = parse_mode(j.at("mode").get<std::string>());
    m.t_com = j.at("T_com").get<std::size_t>();
    m.rank = j.at("r").get<std::size_t>();
    m.up_factor = j.at("up_factor").get<double>();
    for (const auto& c : j.at("clusters")) {
      gmm::ClusterModel cm;
      cm.weight = c.at("pi").get<double>();
      cm.mean = json_vector(c.at("mu"));
      cm.singular_values = json_vector(c.at("sigma"));
      const auto rows = c.at("U").at("rows").get<Eigen::Index>();
      const auto cols = c.at("U").at("cols").get<Eigen::Index>();
      const auto data = c.at("U").at("data").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw IoError("model file: U shape does not match data");
      cm.deviations = Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
      if (cm.mean.size() != static_cast<Eigen::Index>(3 * m.t_com) || rows != cm.mean.size() ||
          cols != cm.singular_values.size()) {
        throw IoError("model file: inconsistent cluster dimensions");
      }
      m.clusters.push_back(std::move(cm));
    }
    if (m.clusters.empty()) throw IoError("model file: no clusters");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("model file: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("model file: ") + e.what());
  }
}

inline void write_model(std::ostream& out, const gmm::TrajectoryModel& model) { out << model_to_json(model).dump(1) << '\n'; }

inline gmm::TrajectoryModel read_model(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("model file: ") + e.what());
  }
  return model_from_json(j);
}

}  // namespace trajgmm::io
