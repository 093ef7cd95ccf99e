#include <doctest.h>

#include <cmath>

#include "mpcctv/track_scenario.hpp"
#include "test_support.hpp"

using namespace mpcctv;
using testing_support::Gen;

namespace {

ReferencePath straight_path(double length, double spacing) {
  std::vector<PathKnot> k;
  for (double t = 0.0; t <= length + 1e-9; t += spacing) k.push_back({t, t, 0.0, 0.0});
  return ReferencePath(k, 7.0);
}

ReferencePath arc_path(double radius, double spacing, double length) {
  std::vector<PathKnot> k;
  for (double t = 0.0; t <= length + 1e-9; t += spacing) {
    const double a = t / radius;
    k.push_back({t, radius * std::sin(a), radius * (1.0 - std::cos(a)), a});
  }
  return ReferencePath(k, 7.0);
}

}  // namespace

TEST_CASE("vehicle to obstacle clearance") {
  const Obstacle o{10.0, -2.0, 1.0};
  CHECK(v2o_distance(10.0, -2.0, o, 1.0) == -2.0);
  CHECK(v2o_distance(13.0, 2.0, o, 1.0) == doctest::Approx(3.0));
  const Obstacle shifted{10.0 + 7.5, -2.0 - 3.25, 1.0};
  CHECK(v2o_distance(13.0 + 7.5, 2.0 - 3.25, shifted, 1.0) == doctest::Approx(3.0));

  Gen gen(1);
  for (int i = 0; i < 1000; ++i) {
    const double x1 = gen.uniform(0, 20), y1 = gen.uniform(-5, 5);
    const double x2 = gen.uniform(0, 20), y2 = gen.uniform(-5, 5);
    const double d = std::abs(v2o_distance(x1, y1, o, 1.0) - v2o_distance(x2, y2, o, 1.0));
    CHECK(d <= std::hypot(x1 - x2, y1 - y2) * (1.0 + 1e-12));
  }
}

TEST_CASE("reference path sampling") {
  const auto sc = build_dlc_scenario();
  const auto& knots = sc.path.knots();
  for (std::size_t i = 0; i < knots.size(); i += 37) {
    const auto p = sc.path.sample(knots[i].theta);
    CHECK(p.X == doctest::Approx(knots[i].X).epsilon(1e-12));
    CHECK(p.Y == doctest::Approx(knots[i].Y).epsilon(1e-12));
    CHECK(p.psi == doctest::Approx(knots[i].psi).epsilon(1e-12));
  }

  const auto line = straight_path(50.0, 2.0);
  for (double t = 0.0; t <= 50.0; t += 0.37) {
    const auto p = line.sample(t);
    CHECK(p.psi == 0.0);
    CHECK(p.Y == 0.0);
    CHECK(p.X == doctest::Approx(t));
  }
  // Clamped outside the knot range.
  CHECK(line.sample(-3.0).X == 0.0);
  CHECK(line.sample(60.0).X == doctest::Approx(50.0));

  CHECK_THROWS_AS(ReferencePath().sample(0.0), ConfigError);
  CHECK_THROWS_AS(ReferencePath({{0.0, 0, 0, 0}, {0.0, 1, 0, 0}}, 7.0), ConfigError);
}

TEST_CASE("constant curvature arc interpolation") {
  const double R = 40.0;
  const auto arc = arc_path(R, 1.0, 60.0);
  double worst = 0.0;
  for (double t = 0.5; t < 60.0; t += 1.0) {
    const auto p = arc.sample(t);
    const double a = t / R;
    worst = std::max(worst, std::hypot(p.X - R * std::sin(a), p.Y - R * (1.0 - std::cos(a))));
  }
  CHECK(worst < 1e-3);
  CHECK(arc.curvature(30.0) == doctest::Approx(1.0 / R).epsilon(1e-3));
}

TEST_CASE("sampling is continuous and heading never jumps") {
  // Heading wraps through +-pi on this circle.
  std::vector<PathKnot> k;
  const double R = 10.0;
  for (int i = 0; i <= 200; ++i) {
    const double t = 0.5 * i;
    const double a = t / R + 2.5;
    k.push_back({t, R * std::sin(a), -R * std::cos(a), std::remainder(a, 2.0 * M_PI)});
  }
  const ReferencePath circle(k, 7.0);
  auto prev = circle.sample(0.0);
  for (double t = 0.001; t <= 100.0; t += 0.001) {
    const auto p = circle.sample(t);
    CHECK(std::abs(p.psi - prev.psi) < M_PI);
    CHECK(std::abs(p.psi - prev.psi) < 1e-3);
    CHECK(std::hypot(p.X - prev.X, p.Y - prev.Y) < 2e-3);
    prev = p;
  }
}

TEST_CASE("knot headings match the finite-difference tangent") {
  const auto sc = build_dlc_scenario();
  const auto& k = sc.path.knots();
  for (std::size_t i = 1; i + 1 < k.size(); ++i) {
    const double fd = std::atan2(k[i + 1].Y - k[i - 1].Y, k[i + 1].X - k[i - 1].X);
    CHECK(std::abs(fd - k[i].psi) < 0.1);
  }
}

TEST_CASE("default double lane change") {
  const auto sc = build_dlc_scenario();
  REQUIRE(sc.obstacles.size() == 2);
  CHECK(sc.obstacles[0].X == 99.0);
  CHECK(sc.obstacles[0].Y == 0.0);
  CHECK(sc.obstacles[1].X == 135.0);
  CHECK(sc.obstacles[1].Y == 3.5);
  CHECK(sc.edges.size() == 2);
  CHECK(sc.edges[0] == 3.5);
  CHECK(sc.edges[1] == -3.5);
  CHECK(sc.path.width() == 7.0);
  CHECK(sc.vdes == 19.4);
  CHECK(sc.rveh == 1.0);
  CHECK(sc.obstacles[0].radius == 1.0);
  CHECK(dlc_centerline_y(DlcConfig{}, 50.0) == 0.0);
  CHECK(dlc_centerline_y(DlcConfig{}, 120.0) == doctest::Approx(3.5));
  CHECK(dlc_centerline_y(DlcConfig{}, 170.0) == 0.0);
  // Arc length exceeds the straight-line distance only through the transitions.
  CHECK(sc.path.theta_max() > 200.0);
  CHECK(sc.path.theta_max() < 201.0);
}

TEST_CASE("every obstacle leaves an avoidance corridor") {
  for (double offset : {0.0, 1.0, 2.0, 3.5}) {
    DlcConfig cfg;
    cfg.lane_offset = offset;
    const auto sc = build_dlc_scenario(cfg);
    for (const auto& o : sc.obstacles) {
      const double t = sc.path.project(o.X, o.Y);
      const double lat = lateral_offset(o.X, o.Y, sc.path.sample(t));
      CHECK(std::abs(lat) + o.radius + sc.rveh <= 0.5 * sc.path.width() + 1e-9);
    }
  }
}

TEST_CASE("zero lane offset gives a straight blocked lane") {
  DlcConfig cfg;
  cfg.lane_offset = 0.0;
  const auto sc = build_dlc_scenario(cfg);
  for (const auto& k : sc.path.knots()) {
    CHECK(k.Y == 0.0);
    CHECK(k.psi == 0.0);
  }
  for (const auto& o : sc.obstacles) CHECK(o.Y == 0.0);
}

TEST_CASE("longitudinal scaling") {
  const auto base = build_dlc_scenario();
  const auto half = build_dlc_scenario(DlcConfig{}.scaled_longitudinally(0.5));
  REQUIRE(half.path.knots().size() == base.path.knots().size());
  for (std::size_t i = 0; i < base.path.knots().size(); ++i) {
    CHECK(half.path.knots()[i].X == doctest::Approx(0.5 * base.path.knots()[i].X));
  }
  CHECK(half.obstacles[0].X == doctest::Approx(49.5));
  CHECK(v2o_distance(49.5, 4.0, half.obstacles[0], half.rveh) == doctest::Approx(2.0));
}

TEST_CASE("invalid scenarios are rejected") {
  Scenario sc;
  sc.path = straight_path(100.0, 1.0);
  sc.edges = {3.5, -3.5};
  sc.obstacles = {{50.0, 2.0, 1.0}};
  CHECK_THROWS_AS(sc.validate(), ConfigError);
  sc.obstacles = {{50.0, 1.5, 1.0}};
  CHECK_NOTHROW(sc.validate());
  sc.dsft_obstacle = 0.0;
  CHECK_THROWS_AS(sc.validate(), ConfigError);

  DlcConfig cfg;
  cfg.road_width = 4.0;
  CHECK_THROWS_AS(build_dlc_scenario(cfg), ConfigError);
}

TEST_CASE("edge clearance and lateral offset") {
  const PathPoint<double> ref{10.0, 0.0, 0.0};
  CHECK(lateral_offset(10.0, 1.2, ref) == doctest::Approx(1.2));
  CHECK(v2e_distance(1.2, 3.5, 1.0) == doctest::Approx(1.3));
  CHECK(v2e_distance(1.2, -3.5, 1.0) == doctest::Approx(3.7));
  const PathPoint<double> north{0.0, 0.0, M_PI / 2.0};
  CHECK(lateral_offset(-2.0, 5.0, north) == doctest::Approx(2.0));
}
