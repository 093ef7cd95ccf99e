#pragma once

// Reference path parameterised by travelled distance, obstacle geometry and the
// double-lane-change scenario builder.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mpcctv/autodiff.hpp"

namespace mpcctv {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PathKnot {
  double theta = 0.0;  // distance along the path [m]
  double X = 0.0;
  double Y = 0.0;
  double psi = 0.0;
};

template <typename T>
struct PathPoint {
  T X, Y, psi;
};

/// Piecewise-cubic Hermite path. Position tangents come from the knot
/// headings; heading slopes from centred differences of the unwrapped angle.
class ReferencePath {
 public:
  ReferencePath() = default;
  ReferencePath(std::vector<PathKnot> knots, double width);

  const std::vector<PathKnot>& knots() const { return knots_; }
  double width() const { return width_; }
  double theta_min() const { return knots_.front().theta; }
  double theta_max() const { return knots_.back().theta; }
  bool empty() const { return knots_.empty(); }

  template <typename T>
  PathPoint<T> sample(const T& theta) const;

  PathPoint<double> sample(double theta) const { return sample<double>(theta); }

  /// Heading rate dpsi/dtheta [1/m] of the interpolant.
  double curvature(double theta) const;

  /// Distance along the path of the closest point to (X, Y).
  double project(double X, double Y) const;

 private:
  std::size_t segment(double theta) const;

  std::vector<PathKnot> knots_;
  std::vector<double> psi_slope_;
  double width_ = 0.0;
};

template <typename T>
PathPoint<T> ReferencePath::sample(const T& theta_in) const {
  if (knots_.empty()) throw ConfigError("reference path is empty");
  if (knots_.size() == 1) return {T(knots_[0].X), T(knots_[0].Y), T(knots_[0].psi)};
  T theta = theta_in;
  if (scalar_value(theta) < theta_min()) theta = T(theta_min());
  if (scalar_value(theta) > theta_max()) theta = T(theta_max());

  const std::size_t i = segment(scalar_value(theta));
  const PathKnot& a = knots_[i];
  const PathKnot& b = knots_[i + 1];
  const double h = b.theta - a.theta;
  const T s = (theta - a.theta) / h;
  const T s2 = s * s;
  const T s3 = s2 * s;
  const T h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
  const T h10 = s3 - 2.0 * s2 + s;
  const T h01 = -2.0 * s3 + 3.0 * s2;
  const T h11 = s3 - s2;
  const double psi_b = a.psi + std::remainder(b.psi - a.psi, 2.0 * M_PI);
  return {h00 * a.X + h10 * (h * std::cos(a.psi)) + h01 * b.X + h11 * (h * std::cos(b.psi)),
          h00 * a.Y + h10 * (h * std::sin(a.psi)) + h01 * b.Y + h11 * (h * std::sin(b.psi)),
          h00 * a.psi + h10 * (h * psi_slope_[i]) + h01 * psi_b + h11 * (h * psi_slope_[i + 1])};
}

struct Obstacle {
  double X = 0.0;
  double Y = 0.0;
  double radius = 1.0;
};

/// Signed clearance between the vehicle circle and an obstacle circle [m];
/// negative means the circles overlap.
template <typename T>
T v2o_distance(const T& X, const T& Y, const Obstacle& obs, double rveh) {
  using std::sqrt;
  const T dx = X - obs.X;
  const T dy = Y - obs.Y;
  return sqrt(dx * dx + dy * dy) - obs.radius - rveh;
}

struct Scenario {
  ReferencePath path;
  std::vector<Obstacle> obstacles;
  std::vector<double> edges;  // lateral offsets of the road edges, left positive [m]
  double rveh = 1.0;
  double vdes = 19.4;
  double dsft_obstacle = 2.0;
  double dsft_edge = 0.5;

  void validate() const;
};

/// Lateral offset of a point from the path sample (left positive).
template <typename T>
T lateral_offset(const T& X, const T& Y, const PathPoint<T>& ref) {
  using std::cos;
  using std::sin;
  return -sin(ref.psi) * (X - ref.X) + cos(ref.psi) * (Y - ref.Y);
}

/// Clearance between the vehicle circle and an edge line offset `edge` from the
/// path; the road interior is on the path side of the edge.
template <typename T>
T v2e_distance(const T& lateral, double edge, double rveh) {
  return (edge >= 0.0 ? T(edge - lateral) : T(lateral - edge)) - rveh;
}

struct DlcConfig {
  double x_begin = 0.0;
  double x_end = 200.0;
  double lane_offset = 3.5;
  double road_width = 7.0;
  double lc1_start = 92.0;
  double lc1_length = 20.0;
  double lc2_start = 126.0;
  double lc2_length = 20.0;
  double obstacle1_x = 99.0;
  double obstacle2_x = 135.0;
  double obstacle_radius = 1.0;
  double vehicle_radius = 1.0;
  double vdes = 19.4;
  double dsft_obstacle = 2.0;
  double dsft_edge = 0.5;
  double sample_spacing = 0.5;

  /// Copy with every longitudinal coordinate multiplied by k.
  DlcConfig scaled_longitudinally(double k) const;
};

/// Lateral offset of the double-lane-change centreline at longitudinal
/// position x (smooth cosine transitions, zero curvature on the straights).
double dlc_centerline_y(const DlcConfig& cfg, double x);

Scenario build_dlc_scenario(const DlcConfig& cfg = {});

}  // namespace mpcctv
