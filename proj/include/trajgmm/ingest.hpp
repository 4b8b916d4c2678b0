#pragma once

// Measurement-file parsing, per-target track splitting, landing/takeoff
// classification and time/scale canonicalization.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trajgmm/error.hpp"
#include "trajgmm/geo.hpp"

namespace trajgmm {

enum class Mode { unclassified, landing, takeoff };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::landing: return "landing";
    case Mode::takeoff: return "takeoff";
    default: return "unclassified";
  }
}

inline Mode parse_mode(std::string_view s) {
  if (s == "landing") return Mode::landing;
  if (s == "takeoff") return Mode::takeoff;
  if (s == "unclassified") return Mode::unclassified;
  throw InvalidArgument("unknown mode '" + std::string(s) + "'");
}

namespace ingest {

using geo::EnuPosition;
using geo::GeodeticPosition;

struct Measurement {
  double time = 0.0;  // seconds since the first report of the track
  EnuPosition position;
};

struct RawTrack {
  std::string target_id;
  double start_time = 0.0;  // absolute time of the first report
  std::vector<Measurement> measurements;
  Mode mode = Mode::unclassified;

  [[nodiscard]] double duration() const {
    return measurements.empty() ? 0.0 : measurements.back().time - measurements.front().time;
  }
};

struct Record {
  std::string target_id;
  double time = 0.0;
  GeodeticPosition position;
};

struct Diagnostic {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct ParseResult {
  std::vector<Record> records;
  std::vector<Diagnostic> diagnostics;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads `target_id,unix_time,lat_deg,lon_deg,alt_m` lines. Blank lines and
/// lines starting with '#' are skipped; malformed lines become diagnostics.
inline ParseResult parse_measurements(std::istream& in) {
  if (!in.good()) throw IoError("measurement stream is not readable");
  ParseResult out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view view = detail::trim(line);
    if (view.empty() || view.front() == '#') continue;

    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (true) {
      const auto comma = view.find(',', pos);
      fields.push_back(view.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (fields.size() != 5) {
      out.diagnostics.push_back({lineno, "expected 5 fields, found " + std::to_string(fields.size())});
      continue;
    }
    const auto id = detail::trim(fields[0]);
    const auto t = detail::parse_double(fields[1]);
    const auto lat = detail::parse_double(fields[2]);
    const auto lon = detail::parse_double(fields[3]);
    const auto alt = detail::parse_double(fields[4]);
    if (id.empty()) {
      out.diagnostics.push_back({lineno, "empty target id"});
      continue;
    }
    if (!t || !lat || !lon || !alt) {
      out.diagnostics.push_back({lineno, "unparseable numeric field"});
      continue;
    }
    const GeodeticPosition g{*lat, *lon, *alt};
    if (!g.valid()) {
      out.diagnostics.push_back({lineno, "latitude/longitude out of range"});
      continue;
    }
    out.records.push_back({std::string(id), *t, g});
  }
  if (in.bad()) throw IoError("read error on measurement stream");
  return out;
}

/// Splits one target's time-sorted measurements wherever consecutive reports
/// are more than `gap_threshold` seconds apart. Each track is re-based so its
/// first report is at t = 0.
inline std::vector<RawTrack> split_tracks(std::string_view target_id, const std::vector<Measurement>& sorted,
                                          double gap_threshold = 30.0) {
  std::vector<RawTrack> tracks;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i == 0 || sorted[i].time - sorted[i - 1].time > gap_threshold) {
      tracks.push_back({std::string(target_id), sorted[i].time, {}, Mode::unclassified});
    }
    auto& track = tracks.back();
    track.measurements.push_back({sorted[i].time - track.start_time, sorted[i].position});
  }
  return tracks;
}

/// ENU conversion, airspace filtering, grouping by target and splitting.
/// Targets are emitted in lexicographic id order.
inline std::vector<RawTrack> extract_tracks(const std::vector<Record>& records, const geo::AirportReference& ref,
                                            double gap_threshold = 30.0) {
  std::map<std::string, std::vector<Measurement>> by_target;
  for (const auto& r : records) {
    const auto enu = geo::geodetic_to_enu(r.position, ref);
    if (!geo::in_terminal_airspace(enu, ref)) continue;
    by_target[r.target_id].push_back({r.time, enu});
  }
  std::vector<RawTrack> out;
  for (auto& [id, ms] : by_target) {
    std::stable_sort(ms.begin(), ms.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    for (auto& t : split_tracks(id, ms, gap_threshold)) out.push_back(std::move(t));
  }
  return out;
}

enum class TrackClass { landing, takeoff, discard };

inline std::string_view to_string(TrackClass c) {
  switch (c) {
    case TrackClass::landing: return "landing";
    case TrackClass::takeoff: return "takeoff";
    default: return "discard";
  }
}

struct ClassificationRules {
  double vertical_rate_fpm = 200.0;
  double landing_fraction = 0.95;
  double takeoff_fraction = 0.05;
};

/// Index of the report closest to the airport origin; ties go to the
/// smallest index.
inline std::size_t closest_index(const RawTrack& track) {
  if (track.measurements.empty()) throw InvalidArgument("closest_index: empty track");
  std::size_t best = 0;
  double best_norm = track.measurements[0].position.norm();
  for (std::size_t i = 1; i < track.measurements.size(); ++i) {
    const double n = track.measurements[i].position.norm();
    if (n < best_norm) {
      best = i;
      best_norm = n;
    }
  }
  return best;
}

/// Average vertical rate from the track endpoints, in ft/min.
inline double average_vertical_rate_fpm(const RawTrack& track) {
  const auto& first = track.measurements.front();
  const auto& last = track.measurements.back();
  const double mps = (last.position.up - first.position.up) / (last.time - first.time);
  return mps * 60.0 / geo::kMetersPerFoot;
}

/// A landing starts outside the runway radius, passes within it in the last
/// few percent of the track and descends; a takeoff is the time mirror.
inline TrackClass classify_track(const RawTrack& track, const geo::AirportReference& ref,
                                 const ClassificationRules& rules = {}) {
  if (track.measurements.size() < 2 || !(track.duration() > 0.0)) {
    throw InvalidArgument("classify_track: degenerate track (zero duration)");
  }
  const auto& ms = track.measurements;
  const double radius = ref.runway_radius();
  const std::size_t c = closest_index(track);
  const double t0 = ms.front().time;
  const double frac = (ms[c].time - t0) / (ms.back().time - t0);
  const double rate = average_vertical_rate_fpm(track);
  const bool near = ms[c].position.norm() < radius;

  if (near && ms.front().position.norm() > radius && rate < -rules.vertical_rate_fpm &&
      frac > rules.landing_fraction) {
    return TrackClass::landing;
  }
  if (near && ms.back().position.norm() > radius && rate > rules.vertical_rate_fpm &&
      frac < rules.takeoff_fraction) {
    return TrackClass::takeoff;
  }
  return TrackClass::discard;
}

/// t -> T - t with T the last time; report order is reversed so times stay
/// ascending. Applying it twice restores the input.
inline RawTrack reverse_time(const RawTrack& track) {
  RawTrack out = track;
  if (track.measurements.empty()) return out;
  const double last = track.measurements.back().time;
  out.measurements.assign(track.measurements.rbegin(), track.measurements.rend());
  for (auto& m : out.measurements) m.time = last - m.time;
  return out;
}

/// Trims at the runway-closest report and orients time so that t = 0 is that
/// report. Landings are time-reversed.
inline RawTrack canonicalize(const RawTrack& track, Mode mode) {
  if (mode == Mode::unclassified) throw InvalidArgument("canonicalize: mode must be landing or takeoff");
  const std::size_t c = closest_index(track);
  RawTrack out = track;
  out.mode = mode;
  if (mode == Mode::landing) {
    out.measurements.resize(c + 1);
  } else {
    out.measurements.erase(out.measurements.begin(), out.measurements.begin() + static_cast<std::ptrdiff_t>(c));
  }
  if (out.measurements.size() < 2) throw InvalidArgument("canonicalize: fewer than two reports after trimming");
  if (mode == Mode::landing) {
    out = reverse_time(out);
  } else {
    const double t0 = out.measurements.front().time;
    for (auto& m : out.measurements) m.time -= t0;
    out.start_time += t0;
  }
  return out;
}

inline RawTrack scale(RawTrack track, double up_factor = 10.0) {
  for (auto& m : track.measurements) m.position.up *= up_factor;
  return track;
}

inline RawTrack unscale(RawTrack track, double up_factor = 10.0) {
  for (auto& m : track.measurements) m.position.up /= up_factor;
  return track;
}

}  // namespace ingest
}  // namespace trajgmm
