#include "mpcctv/track_scenario.hpp"

#include <string>

namespace mpcctv {

ReferencePath::ReferencePath(std::vector<PathKnot> knots, double width)
    : knots_(std::move(knots)), width_(width) {
  if (knots_.empty()) throw ConfigError("reference path needs at least one knot");
  if (!(width_ > 0.0)) throw ConfigError("road width must be positive");
  for (std::size_t i = 1; i < knots_.size(); ++i) {
    if (!(knots_[i].theta > knots_[i - 1].theta)) {
      throw ConfigError("reference path theta must be strictly increasing (knot " +
                        std::to_string(i) + ")");
    }
  }
  // Unwrap so neighbouring headings never differ by more than pi.
  for (std::size_t i = 1; i < knots_.size(); ++i) {
    knots_[i].psi = knots_[i - 1].psi + std::remainder(knots_[i].psi - knots_[i - 1].psi, 2.0 * M_PI);
  }
  const std::size_t n = knots_.size();
  psi_slope_.assign(n, 0.0);
  if (n >= 2) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lo = i == 0 ? 0 : i - 1;
      const std::size_t hi = i + 1 == n ? n - 1 : i + 1;
      psi_slope_[i] = (knots_[hi].psi - knots_[lo].psi) / (knots_[hi].theta - knots_[lo].theta);
    }
  }
}

std::size_t ReferencePath::segment(double theta) const {
  auto it = std::upper_bound(knots_.begin(), knots_.end(), theta,
                             [](double t, const PathKnot& k) { return t < k.theta; });
  std::size_t i = it == knots_.begin() ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
  return std::min(i, knots_.size() - 2);
}

double ReferencePath::curvature(double theta) const {
  if (knots_.size() < 2) return 0.0;
  theta = std::clamp(theta, theta_min(), theta_max());
  const std::size_t i = segment(theta);
  const PathKnot& a = knots_[i];
  const PathKnot& b = knots_[i + 1];
  const double h = b.theta - a.theta;
  const double s = (theta - a.theta) / h;
  const double d00 = 6.0 * s * s - 6.0 * s;
  const double d10 = 3.0 * s * s - 4.0 * s + 1.0;
  const double d01 = -d00;
  const double d11 = 3.0 * s * s - 2.0 * s;
  return (d00 * a.psi + d01 * b.psi) / h + d10 * psi_slope_[i] + d11 * psi_slope_[i + 1];
}

double ReferencePath::project(double X, double Y) const {
  if (knots_.empty()) throw ConfigError("reference path is empty");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    const double d = std::hypot(knots_[i].X - X, knots_[i].Y - Y);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  double lo = knots_[best == 0 ? 0 : best - 1].theta;
  double hi = knots_[std::min(best + 1, knots_.size() - 1)].theta;
  auto dist2 = [&](double t) {
    const auto p = sample(t);
    return (p.X - X) * (p.X - X) + (p.Y - Y) * (p.Y - Y);
  };
  // Golden-section search on the bracketing segments.
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = hi - g * (hi - lo);
  double d = lo + g * (hi - lo);
  for (int it = 0; it < 80 && hi - lo > 1e-10; ++it) {
    if (dist2(c) < dist2(d)) {
      hi = d;
    } else {
      lo = c;
    }
    c = hi - g * (hi - lo);
    d = lo + g * (hi - lo);
  }
  return 0.5 * (lo + hi);
}

void Scenario::validate() const {
  if (path.empty()) throw ConfigError("scenario path is empty");
  if (!(dsft_obstacle > 0.0) || !(dsft_edge > 0.0)) {
    throw ConfigError("safety distances must be positive");
  }
  if (!(edges.empty() || edges.size() == 2)) {
    throw ConfigError("scenario must have zero or two road edges");
  }
  if (!(rveh > 0.0)) throw ConfigError("vehicle radius must be positive");
  for (std::size_t i = 0; i < obstacles.size(); ++i) {
    const auto& o = obstacles[i];
    if (!(o.radius > 0.0)) {
      throw ConfigError("obstacle " + std::to_string(i + 1) + " radius must be positive");
    }
    const double theta = path.project(o.X, o.Y);
    const auto ref = path.sample(theta);
    const double lat = lateral_offset(o.X, o.Y, ref);
    if (std::abs(lat) + o.radius + rveh > 0.5 * path.width() + 1e-9) {
      throw ConfigError("obstacle " + std::to_string(i + 1) + " at (" + std::to_string(o.X) +
                        ", " + std::to_string(o.Y) +
                        ") is outside the road: no avoidance corridor");
    }
  }
}

DlcConfig DlcConfig::scaled_longitudinally(double k) const {
  DlcConfig c = *this;
  c.x_begin *= k;
  c.x_end *= k;
  c.lc1_start *= k;
  c.lc1_length *= k;
  c.lc2_start *= k;
  c.lc2_length *= k;
  c.obstacle1_x *= k;
  c.obstacle2_x *= k;
  c.sample_spacing *= k;
  return c;
}

namespace {

// Smooth step from 0 to 1 over [start, start + length].
double cosine_step(double x, double start, double length, double* slope) {
  if (x <= start || length <= 0.0) {
    *slope = 0.0;
    return x <= start ? 0.0 : 1.0;
  }
  if (x >= start + length) {
    *slope = 0.0;
    return 1.0;
  }
  const double s = (x - start) / length;
  *slope = 0.5 * M_PI * std::sin(M_PI * s) / length;
  return 0.5 * (1.0 - std::cos(M_PI * s));
}

double centerline(const DlcConfig& cfg, double x, double* dydx) {
  double s1 = 0.0, s2 = 0.0;
  const double up = cosine_step(x, cfg.lc1_start, cfg.lc1_length, &s1);
  const double down = cosine_step(x, cfg.lc2_start, cfg.lc2_length, &s2);
  *dydx = cfg.lane_offset * (s1 - s2);
  return cfg.lane_offset * (up - down);
}

}  // namespace

double dlc_centerline_y(const DlcConfig& cfg, double x) {
  double slope = 0.0;
  return centerline(cfg, x, &slope);
}

Scenario build_dlc_scenario(const DlcConfig& cfg) {
  if (!(cfg.x_end > cfg.x_begin)) throw ConfigError("dlc: x_end must exceed x_begin");
  if (!(cfg.sample_spacing > 0.0)) throw ConfigError("dlc: sample_spacing must be positive");
  if (!(cfg.road_width > 0.0)) throw ConfigError("dlc: road_width must be positive");
  if (!(cfg.lc1_length >= 0.0 && cfg.lc2_length >= 0.0)) {
    throw ConfigError("dlc: transition lengths must be non-negative");
  }
  if (cfg.lc2_start < cfg.lc1_start + cfg.lc1_length) {
    throw ConfigError("dlc: the return transition must start after the first one ends");
  }

  // Arc length by composite Simpson integration between knots.
  const auto n = static_cast<std::size_t>(std::ceil((cfg.x_end - cfg.x_begin) / cfg.sample_spacing));
  const double hx = (cfg.x_end - cfg.x_begin) / static_cast<double>(n);
  auto speed = [&](double x) {
    double slope = 0.0;
    centerline(cfg, x, &slope);
    return std::sqrt(1.0 + slope * slope);
  };
  std::vector<PathKnot> knots;
  knots.reserve(n + 1);
  double theta = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double x = cfg.x_begin + hx * static_cast<double>(i);
    if (i > 0) {
      const double x0 = x - hx;
      constexpr int kSub = 8;
      const double hs = hx / kSub;
      double acc = speed(x0) + speed(x);
      for (int k = 1; k < kSub; ++k) acc += (k % 2 ? 4.0 : 2.0) * speed(x0 + k * hs);
      theta += acc * hs / 3.0;
    }
    double slope = 0.0;
    const double y = centerline(cfg, x, &slope);
    knots.push_back({theta, x, y, std::atan(slope)});
  }

  Scenario sc;
  sc.path = ReferencePath(std::move(knots), cfg.road_width);
  sc.obstacles = {{cfg.obstacle1_x, 0.0, cfg.obstacle_radius},
                  {cfg.obstacle2_x, cfg.lane_offset, cfg.obstacle_radius}};
  sc.edges = {0.5 * cfg.road_width, -0.5 * cfg.road_width};
  sc.rveh = cfg.vehicle_radius;
  sc.vdes = cfg.vdes;
  sc.dsft_obstacle = cfg.dsft_obstacle;
  sc.dsft_edge = cfg.dsft_edge;
  sc.validate();
  return sc;
}

}  // namespace mpcctv
