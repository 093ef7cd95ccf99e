#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mpcctv/tyre_model.hpp"
#include "test_support.hpp"

using namespace mpcctv;
using testing_support::Gen;

namespace {

// Independent restatement: sin(2 atan x) = 2x / (1 + x^2).
double cy_oracle(double fz, const TyreParams& p) {
  const double x = fz / (p.c2 * p.Fz0);
  return p.c1 * p.Fz0 * 2.0 * x / (1.0 + x * x);
}

double cym_oracle(double fx, double fz, const TyreParams& p) {
  const double cap = p.mu * fz;
  const double ratio = std::abs(fx) / cap;
  return 0.5 * (cap - std::abs(fx)) +
         std::pow(1.0 - std::pow(ratio, p.c3), p.c3) * (cy_oracle(fz, p) - 0.5 * cap);
}

double fy(double alpha, double fx, double fz, const TyreParams& p) {
  return lateral_force(TyreQuery{alpha, fx, fz}, p);
}

// Classic Fiala curve with flat saturation.
double classic_fiala(double alpha, double fx, double fz, const TyreParams& p) {
  const double cym = cym_oracle(fx, fz, p);
  const double fm = std::sqrt(p.mu * fz * p.mu * fz - fx * fx);
  const double t = std::tan(alpha);
  if (std::abs(t) >= 3.0 * fm / cym) return -fm * (alpha > 0 ? 1.0 : -1.0);
  return -cym * t + cym * cym * t * std::abs(t) / (3.0 * fm) - std::pow(cym * t, 3) / (27.0 * fm * fm);
}

}  // namespace

TEST_CASE("cornering stiffness against load") {
  const TyreParams p;
  CHECK(cornering_stiffness_fz(0.0, p) == 0.0);
  CHECK(cornering_stiffness_fz(p.c2 * p.Fz0, p) == doctest::Approx(p.c1 * p.Fz0).epsilon(1e-12));
  CHECK(p.c1 * p.Fz0 == doctest::Approx(211990.0));
  // Nominal load: 111994.7 N/rad by direct evaluation.
  CHECK(cornering_stiffness_fz(p.Fz0, p) == doctest::Approx(cy_oracle(p.Fz0, p)).epsilon(1e-12));
  CHECK(cornering_stiffness_fz(p.Fz0, p) == doctest::Approx(111994.7).epsilon(1e-6));
  // Global maximum at Fz = c2 Fz0.
  for (double fz = 500.0; fz < 40000.0; fz += 500.0) {
    CHECK(cornering_stiffness_fz(fz, p) <= p.c1 * p.Fz0 * (1.0 + 1e-12));
  }
}

TEST_CASE("cornering stiffness against longitudinal force") {
  const TyreParams p;
  const double fz = 4300.0;
  CHECK(cornering_stiffness_fx(0.0, fz, p) == cornering_stiffness_fz(fz, p));
  const double cap = p.mu * fz;
  CHECK(cornering_stiffness_fx(cap * (1.0 - 1e-3), fz, p) / cornering_stiffness_fz(fz, p) < 1e-4);
  CHECK(cornering_stiffness_fx(-0.4 * cap, fz, p) == doctest::Approx(cym_oracle(-0.4 * cap, fz, p)));
  CHECK(cornering_stiffness_fx(0.4 * cap, fz, p) == cornering_stiffness_fx(-0.4 * cap, fz, p));
  CHECK_THROWS_AS(cornering_stiffness_fx(cap, fz, p), SaturatedInputError);
  CHECK_THROWS_AS(cornering_stiffness_fx(-1.01 * cap, fz, p), SaturatedInputError);

  double prev = cornering_stiffness_fx(0.0, fz, p);
  for (int i = 1; i < 1000; ++i) {
    const double c = cornering_stiffness_fx(cap * i / 1000.0, fz, p);
    CHECK(c <= prev);
    CHECK(c >= 0.0);
    prev = c;
  }
}

TEST_CASE("friction circle capacity") {
  const TyreParams p;
  const double fz = 5000.0;
  const double cap = p.mu * fz;
  CHECK(fy_max(0.0, fz, p) == cap);
  CHECK(fy_max(cap, fz, p) == 0.0);
  CHECK(fy_max(0.6 * cap, fz, p) == doctest::Approx(0.8 * cap).epsilon(1e-14));
  CHECK_THROWS_AS(fy_max(1.001 * cap, fz, p), SaturatedInputError);
}

TEST_CASE("slip threshold") {
  CHECK(slip_threshold(122550.0, 4085.0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(slip_threshold(3.0 * 122550.0, 3.0 * 4085.0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(slip_threshold(1e300, 4085.0) < 1e-290);
  CHECK_THROWS_AS(slip_threshold(0.0, 4085.0), DegenerateStiffnessError);
  CHECK_THROWS_AS(slip_threshold(-1.0, 4085.0), DegenerateStiffnessError);
}

TEST_CASE("lateral force examples") {
  TyreParams p;
  CHECK(fy(0.0, 0.0, 4300.0, p) == 0.0);
  CHECK(fy(0.1, 100.0, 0.0, p) == 0.0);

  const double fx = 1000.0, fz = 4300.0;
  const double fm = fy_max(fx, fz, p);
  const double thr = slip_angle_threshold(fx, fz, p);
  CHECK(fy(thr, fx, fz, p) == doctest::Approx(-fm).epsilon(1e-9));
  CHECK(fy(-thr, fx, fz, p) == doctest::Approx(fm).epsilon(1e-9));

  p.zeta = 1.0;
  const double thr2 = std::atan(2.0 * std::tan(thr));
  CHECK(fy(thr2, fx, fz, p) == doctest::Approx(-fm).epsilon(1e-12));
}

TEST_CASE("lateral force is odd in slip") {
  Gen gen(11);
  for (int i = 0; i < 500; ++i) {
    TyreParams p;
    p.zeta = gen.uniform(0.0, 2.0);
    const double fz = gen.uniform(0.0, 9000.0);
    const double fx = gen.uniform(-0.95, 0.95) * p.mu * fz;
    const double a = gen.uniform(-0.5, 0.5);
    CHECK(fy(-a, fx, fz, p) == -fy(a, fx, fz, p));
  }
}

TEST_CASE("branch identity at the threshold") {
  Gen gen(7);
  for (int i = 0; i < 100; ++i) {
    TyreParams p;
    p.zeta = gen.uniform(0.0, 2.0);
    const double fz = gen.uniform(1000.0, 9000.0);
    const double fx = gen.uniform(-0.9, 0.9) * p.mu * fz;
    const double cym = cym_oracle(fx, fz, p);
    const double fm = std::sqrt(p.mu * fz * p.mu * fz - fx * fx);
    const double t = 3.0 * fm / cym;
    const double cubic = -cym * t + cym * cym * t * t / (3.0 * fm) - std::pow(cym * t, 3) / (27.0 * fm * fm);
    const double sat = 2.0 * cym * (p.zeta - 1.0) * t / 3.0 -
                       cym * cym * (p.zeta - 1.0) * t * t / (9.0 * fm) - fm * p.zeta;
    CHECK(std::abs(cubic + fm) <= 1e-9 * fm);
    CHECK(std::abs(sat + fm) <= 1e-9 * fm);
    CHECK(std::abs(fy(std::atan(t), fx, fz, p) + fm) <= 1e-9 * fm);
  }
}

TEST_CASE("continuity of value and slope at the threshold") {
  for (double fz = 2000.0; fz <= 8000.0; fz += 1000.0) {
    for (double frac = -0.8; frac <= 0.8 + 1e-12; frac += 0.2) {
      for (double zeta : {0.5, 1.0, 1.5}) {
        TyreParams p;
        p.zeta = zeta;
        const double fx = frac * p.mu * fz;
        const double fm = fy_max(fx, fz, p);
        const double thr = slip_angle_threshold(fx, fz, p);
        const double eps = 1e-9;
        CHECK(std::abs(fy(thr - eps, fx, fz, p) - fy(thr + eps, fx, fz, p)) / fm < 1e-6);
        // One-sided slopes relative to the linear-region slope scale.
        const double h = 1e-6;
        const double left = (fy(thr, fx, fz, p) - fy(thr - h, fx, fz, p)) / h;
        const double right = (fy(thr + h, fx, fz, p) - fy(thr, fx, fz, p)) / h;
        const double scale = cornering_stiffness_fx(fx, fz, p);
        CHECK(std::abs(left - right) / scale < 1e-4);
      }
    }
  }
}

TEST_CASE("linear-region slope equals minus the stiffness") {
  Gen gen(3);
  for (int i = 0; i < 50; ++i) {
    TyreParams p;
    p.zeta = gen.uniform(0.0, 2.0);
    const double fz = gen.uniform(1500.0, 8000.0);
    const double fx = gen.uniform(-0.8, 0.8) * p.mu * fz;
    const double h = 1e-7;
    const double slope = (fy(h, fx, fz, p) - fy(-h, fx, fz, p)) / (2.0 * h);
    const double cym = cornering_stiffness_fx(fx, fz, p);
    CHECK(std::abs(slope + cym) / cym < 1e-3);
  }
}

TEST_CASE("friction circle inside the cubic branch") {
  Gen gen(5);
  for (int i = 0; i < 2000; ++i) {
    TyreParams p;
    p.zeta = gen.uniform(0.0, 2.0);
    const double fz = gen.uniform(500.0, 9000.0);
    const double fx = gen.uniform(-0.99, 0.99) * p.mu * fz;
    const double thr = slip_angle_threshold(fx, fz, p);
    const double a = gen.uniform(-thr, thr);
    const double f = fy(a, fx, fz, p);
    CHECK(std::abs(f) <= fy_max(fx, fz, p) * (1.0 + 1e-12));
    CHECK(std::hypot(fx, f) <= p.mu * fz * (1.0 + 1e-9));
  }
}

TEST_CASE("friction circle in the falling saturation range") {
  // For zeta <= 1 the saturated curve stays within the circle until it has
  // fallen well past the peak; checked up to twice the threshold slip.
  Gen gen(9);
  for (int i = 0; i < 2000; ++i) {
    TyreParams p;
    p.zeta = gen.uniform(0.0, 1.0);
    const double fz = gen.uniform(500.0, 9000.0);
    const double fx = gen.uniform(-0.99, 0.99) * p.mu * fz;
    const double tthr = std::tan(slip_angle_threshold(fx, fz, p));
    const double a = std::atan(gen.uniform(1.0, 2.0) * tthr);
    CHECK(std::hypot(fx, fy(a, fx, fz, p)) <= p.mu * fz * (1.0 + 1e-9));
  }
}

TEST_CASE("saturation gradient sign follows zeta") {
  // Restoring force -sign(alpha) Fy; for zeta < 1 it eventually crosses zero,
  // so |Fy| is only monotone up to that crossing.
  for (double zeta : {0.0, 0.5, 0.8, 1.0, 1.2, 1.5, 2.0}) {
    TyreParams p;
    p.zeta = zeta;
    for (double fz : {2000.0, 4300.0, 7000.0}) {
      for (double frac : {-0.5, 0.0, 0.5}) {
        const double fx = frac * p.mu * fz;
        const double thr = slip_angle_threshold(fx, fz, p);
        for (double sgn : {1.0, -1.0}) {
          double prev = -sgn * fy(sgn * thr, fx, fz, p);
          for (int k = 1; k <= 400; ++k) {
            const double a = sgn * (thr + (1.4 - thr) * k / 400.0);
            const double cur = -sgn * fy(a, fx, fz, p);
            if (zeta <= 1.0) CHECK(cur <= prev + 1e-9 * std::abs(prev));
            if (zeta >= 1.0) CHECK(cur >= prev - 1e-9 * std::abs(prev));
            prev = cur;
          }
        }
      }
    }
  }
}

TEST_CASE("magnitude decays for zeta 0.8 until the force reverses") {
  TyreParams p;
  p.zeta = 0.8;
  const double fz = 4300.0;
  const double tthr = std::tan(slip_angle_threshold(0.0, fz, p));
  // Zero crossing of the saturated branch at tan(alpha) = (1 + sqrt(5)) tan(thr).
  const double t_zero = (1.0 + std::sqrt(5.0)) * tthr;
  CHECK(std::abs(fy(std::atan(t_zero), 0.0, fz, p)) < 1e-9 * p.mu * fz);
  double prev = std::abs(fy(std::atan(tthr), 0.0, fz, p));
  for (int k = 1; k <= 200; ++k) {
    const double cur = std::abs(fy(std::atan(tthr + (t_zero - tthr) * k / 200.0), 0.0, fz, p));
    CHECK(cur <= prev + 1e-9);
    prev = cur;
  }
}

TEST_CASE("parameter validation") {
  TyreParams p;
  CHECK_NOTHROW(p.validate());
  p.zeta = 2.1;
  CHECK_THROWS(p.validate());
  p = TyreParams{};
  p.c3 = 0.0;
  CHECK_THROWS(p.validate());
}

TEST_CASE("fit recovers the generating parameters") {
  const TyreParams truth;
  const auto samples = generate_tyre_samples(truth);
  const auto rep = fit_tyre_params(samples);
  CHECK(rep.n_samples == samples.size());
  CHECK(rep.params.c1 == doctest::Approx(truth.c1).epsilon(0.01));
  CHECK(rep.params.c2 == doctest::Approx(truth.c2).epsilon(0.01));
  CHECK(rep.params.c3 == doctest::Approx(truth.c3).epsilon(0.01));
  CHECK(rep.params.mu == doctest::Approx(truth.mu).epsilon(0.01));
  CHECK(rep.params.zeta == doctest::Approx(truth.zeta).epsilon(0.01));
  CHECK(rep.rms_residual_n < 1e-6 * truth.mu * truth.Fz0);
}

TEST_CASE("fit of a flat-saturation curve gives zeta near one") {
  const TyreParams truth;
  std::vector<TyreSample> samples;
  for (double fz : {2000.0, 3500.0, 5000.0, 6500.0}) {
    for (double frac : {-0.6, -0.3, 0.0, 0.3, 0.6}) {
      for (int i = 0; i < 27; ++i) {
        const double a = -0.26 + 0.52 * i / 26.0;
        const double fx = frac * truth.mu * fz;
        samples.push_back({a, fx, fz, classic_fiala(a, fx, fz, truth)});
      }
    }
  }
  const auto rep = fit_tyre_params(samples);
  CHECK(rep.params.zeta == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("fit is invariant to duplicating every sample") {
  TyreParams truth;
  truth.zeta = 1.3;
  auto samples = generate_tyre_samples(truth, 0.2, 21);
  Gen gen(13);
  for (auto& s : samples) s.Fy += gen.uniform(-20.0, 20.0);
  const auto once = fit_tyre_params(samples);
  auto doubled = samples;
  doubled.insert(doubled.end(), samples.begin(), samples.end());
  const auto twice = fit_tyre_params(doubled);
  CHECK(twice.params.c1 == doctest::Approx(once.params.c1).epsilon(1e-6));
  CHECK(twice.params.c2 == doctest::Approx(once.params.c2).epsilon(1e-6));
  CHECK(twice.params.c3 == doctest::Approx(once.params.c3).epsilon(1e-6));
  CHECK(twice.params.mu == doctest::Approx(once.params.mu).epsilon(1e-6));
  CHECK(twice.params.zeta == doctest::Approx(once.params.zeta).epsilon(1e-6));
  CHECK(twice.rms_residual_n == doctest::Approx(once.rms_residual_n).epsilon(1e-6));
}

TEST_CASE("fit rejects samples without saturated coverage") {
  const TyreParams truth;
  auto samples = generate_tyre_samples(truth, 0.9 * M_PI / 180.0, 27);
  CHECK_THROWS_AS(fit_tyre_params(samples), IllPosedFitError);
  std::vector<TyreSample> few(samples.begin(), samples.begin() + 10);
  CHECK_THROWS_AS(fit_tyre_params(few), IllPosedFitError);
}

TEST_CASE("tyre sample csv round trip and schema errors") {
  const auto samples = generate_tyre_samples(TyreParams{}, 0.2, 5);
  const std::string path = "tyre_samples_roundtrip.csv";
  {
    std::ofstream out(path);
    out << tyre_samples_to_csv(samples);
  }
  const auto back = read_tyre_samples_csv(path);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].alpha == samples[i].alpha);
    CHECK(back[i].Fy == samples[i].Fy);
  }
  {
    std::ofstream out(path);
    out << "alpha_rad,fx_n,load_n,fy_n\n0,0,1,0\n";
  }
  try {
    read_tyre_samples_csv(path);
    FAIL("expected a schema error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("load_n") != std::string::npos);
  }
  {
    std::ofstream out(path);
  }
  CHECK_THROWS(read_tyre_samples_csv(path));
  std::remove(path.c_str());
}

TEST_CASE("fit report json fields") {
  TyreFitReport r;
  r.rms_residual_n = 0.5;
  r.n_samples = 60;
  const std::string j = tyre_fit_report_json(r);
  CHECK(j.find("\"params\"") != std::string::npos);
  CHECK(j.find("\"rms_residual_n\"") != std::string::npos);
  CHECK(j.find("\"n_samples\": 60") != std::string::npos);
}
