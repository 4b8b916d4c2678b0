#pragma once

// Geodetic to local east-north-up conversion around an airport reference,
// plus the terminal-airspace membership test.

#include <Eigen/Core>

#include <cmath>
#include <numbers>

#include "trajgmm/error.hpp"

namespace trajgmm::geo {

namespace wgs84 {
inline constexpr double kSemiMajor = 6378137.0;
inline constexpr double kFlattening = 1.0 / 298.257223563;
inline constexpr double kSemiMinor = kSemiMajor * (1.0 - kFlattening);
inline constexpr double kEccentricitySq = kFlattening * (2.0 - kFlattening);
}  // namespace wgs84

inline constexpr double kMetersPerNauticalMile = 1852.0;
inline constexpr double kMetersPerFoot = 0.3048;

struct GeodeticPosition {
  double latitude_deg = 0.0;
  double longitude_deg = 0.0;
  double altitude_m = 0.0;

  [[nodiscard]] bool valid() const {
    return std::isfinite(altitude_m) && latitude_deg >= -90.0 && latitude_deg <= 90.0 &&
           longitude_deg >= -180.0 && longitude_deg <= 180.0;
  }
};

struct EnuPosition {
  double east = 0.0;
  double north = 0.0;
  double up = 0.0;

  [[nodiscard]] Eigen::Vector3d vec() const { return {east, north, up}; }
  [[nodiscard]] double norm() const { return vec().norm(); }
  static EnuPosition from(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
  friend bool operator==(const EnuPosition&, const EnuPosition&) = default;
};

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

inline Eigen::Vector3d wgs84_to_ecef(const GeodeticPosition& g) {
  const double lat = deg2rad(g.latitude_deg);
  const double lon = deg2rad(g.longitude_deg);
  const double s = std::sin(lat);
  const double c = std::cos(lat);
  const double n = wgs84::kSemiMajor / std::sqrt(1.0 - wgs84::kEccentricitySq * s * s);
  return {(n + g.altitude_m) * c * std::cos(lon), (n + g.altitude_m) * c * std::sin(lon),
          (n * (1.0 - wgs84::kEccentricitySq) + g.altitude_m) * s};
}

/// Inverse of wgs84_to_ecef by fixed-point iteration on latitude.
inline GeodeticPosition ecef_to_wgs84(const Eigen::Vector3d& p) {
  constexpr double e2 = wgs84::kEccentricitySq;
  const double rho = std::hypot(p.x(), p.y());
  double lat = std::atan2(p.z(), rho * (1.0 - e2));
  for (int it = 0; it < 50; ++it) {
    const double s = std::sin(lat);
    const double n = wgs84::kSemiMajor / std::sqrt(1.0 - e2 * s * s);
    const double h = rho * std::cos(lat) + p.z() * s - wgs84::kSemiMajor * std::sqrt(1.0 - e2 * s * s);
    const double next = std::atan2(p.z(), rho * (1.0 - e2 * n / (n + h)));
    const bool done = std::abs(next - lat) < 1e-15;
    lat = next;
    if (done) break;
  }
  const double s = std::sin(lat);
  const double h = rho * std::cos(lat) + p.z() * s - wgs84::kSemiMajor * std::sqrt(1.0 - e2 * s * s);
  return {rad2deg(lat), rad2deg(std::atan2(p.y(), p.x())), h};
}

/// Airport-centered local frame and terminal-airspace box.
class AirportReference {
 public:
  AirportReference() : AirportReference(GeodeticPosition{}) {}

  explicit AirportReference(const GeodeticPosition& origin, double runway_radius_m = 2000.0,
                            double lateral_bound_m = 5.0 * kMetersPerNauticalMile,
                            double vertical_bound_m = 3000.0 * kMetersPerFoot)
      : origin_(origin),
        ecef_origin_(wgs84_to_ecef(origin)),
        runway_radius_(runway_radius_m),
        lateral_bound_(lateral_bound_m),
        vertical_bound_(vertical_bound_m) {
    if (!origin.valid()) throw InvalidArgument("airport reference: invalid geodetic origin");
    if (!(runway_radius_m > 0.0) || !(lateral_bound_m > 0.0) || !(vertical_bound_m > 0.0)) {
      throw InvalidArgument("airport reference: radius and bounds must be positive");
    }
    const double lat = deg2rad(origin.latitude_deg);
    const double lon = deg2rad(origin.longitude_deg);
    const double sl = std::sin(lat), cl = std::cos(lat);
    const double so = std::sin(lon), co = std::cos(lon);
    // Rows are the east, north and up unit vectors expressed in ECEF.
    rotation_ << -so, co, 0.0,
                 -sl * co, -sl * so, cl,
                 cl * co, cl * so, sl;
  }

  [[nodiscard]] const GeodeticPosition& origin() const { return origin_; }
  [[nodiscard]] const Eigen::Vector3d& ecef_origin() const { return ecef_origin_; }
  [[nodiscard]] const Eigen::Matrix3d& rotation() const { return rotation_; }
  [[nodiscard]] double runway_radius() const { return runway_radius_; }
  [[nodiscard]] double lateral_bound() const { return lateral_bound_; }
  [[nodiscard]] double vertical_bound() const { return vertical_bound_; }

 private:
  GeodeticPosition origin_;
  Eigen::Vector3d ecef_origin_;
  Eigen::Matrix3d rotation_;
  double runway_radius_;
  double lateral_bound_;
  double vertical_bound_;
};

inline EnuPosition ecef_to_enu(const Eigen::Vector3d& p, const AirportReference& ref) {
  return EnuPosition::from(ref.rotation() * (p - ref.ecef_origin()));
}

inline Eigen::Vector3d enu_to_ecef(const EnuPosition& p, const AirportReference& ref) {
  return ref.ecef_origin() + ref.rotation().transpose() * p.vec();
}

inline EnuPosition geodetic_to_enu(const GeodeticPosition& g, const AirportReference& ref) {
  return ecef_to_enu(wgs84_to_ecef(g), ref);
}

inline GeodeticPosition enu_to_geodetic(const EnuPosition& p, const AirportReference& ref) {
  return ecef_to_wgs84(enu_to_ecef(p, ref));
}

/// Strict box test; the vertical bound is two-sided so slightly negative
/// altitudes near the ground are kept.
inline bool in_terminal_airspace(const EnuPosition& p, const AirportReference& ref) {
  return std::abs(p.east) < ref.lateral_bound() && std::abs(p.north) < ref.lateral_bound() &&
         std::abs(p.up) < ref.vertical_bound();
}

}  // namespace trajgmm::geo
