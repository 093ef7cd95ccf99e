#include "mpcctv/tyre_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace mpcctv {

void TyreParams::validate() const {
  if (!(c1 > 0.0 && c2 > 0.0 && c3 > 0.0 && Fz0 > 0.0 && mu > 0.0)) {
    throw std::invalid_argument("tyre parameters c1, c2, c3, Fz0, mu must be positive");
  }
  if (!(zeta >= 0.0 && zeta <= 2.0)) {
    throw std::invalid_argument("tyre parameter zeta must lie in [0, 2]");
  }
}

double cornering_stiffness_fx(double Fx, double Fz, const TyreParams& p) {
  if (!(std::abs(Fx) < p.mu * Fz)) {
    throw SaturatedInputError("longitudinal force " + std::to_string(Fx) +
                              " N reaches the friction limit " + std::to_string(p.mu * Fz) + " N");
  }
  return cornering_stiffness_fx_unchecked(Fx, Fz, p);
}

double fy_max(double Fx, double Fz, const TyreParams& p) {
  if (std::abs(Fx) > p.mu * Fz) {
    throw SaturatedInputError("longitudinal force " + std::to_string(Fx) +
                              " N exceeds the friction limit " + std::to_string(p.mu * Fz) + " N");
  }
  return fy_max_unchecked(Fx, Fz, p);
}

double slip_threshold(double cym, double fymax) {
  if (!(cym > 0.0)) {
    throw DegenerateStiffnessError("cornering stiffness must be positive, got " +
                                   std::to_string(cym));
  }
  return 3.0 * fymax / cym;
}

double slip_angle_threshold(double Fx, double Fz, const TyreParams& p) {
  return std::atan(slip_threshold(cornering_stiffness_fx(Fx, Fz, p), fy_max(Fx, Fz, p)));
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kFitDim = 5;  // c1, c2, c3, mu, zeta
using FitVec = Eigen::Matrix<double, kFitDim, 1>;

TyreParams unpack(const FitVec& v, double fz0) {
  TyreParams p;
  p.c1 = v[0];
  p.c2 = v[1];
  p.c3 = v[2];
  p.mu = v[3];
  p.zeta = v[4];
  p.Fz0 = fz0;
  return p;
}

const FitVec kLower = (FitVec() << 1.0, 0.1, 0.1, 0.05, 0.0).finished();
const FitVec kUpper = (FitVec() << 500.0, 50.0, 20.0, 3.0, 2.0).finished();
const FitVec kStartLo = (FitVec() << 20.0, 1.5, 1.5, 0.6, 0.2).finished();
const FitVec kStartHi = (FitVec() << 80.0, 6.0, 8.0, 1.3, 1.8).finished();

FitVec project(FitVec v) { return v.cwiseMax(kLower).cwiseMin(kUpper); }

Eigen::VectorXd residuals(std::span<const TyreSample> samples, const FitVec& v, double fz0) {
  const TyreParams p = unpack(v, fz0);
  Eigen::VectorXd r(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    r[static_cast<Eigen::Index>(i)] = lateral_force(TyreQuery{s.alpha, s.Fx, s.Fz}, p) - s.Fy;
  }
  return r;
}

Eigen::MatrixXd jacobian(std::span<const TyreSample> samples, const FitVec& v, double fz0) {
  Eigen::MatrixXd J(static_cast<Eigen::Index>(samples.size()), kFitDim);
  for (int k = 0; k < kFitDim; ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(v[k]));
    FitVec hi = v, lo = v;
    hi[k] += h;
    lo[k] -= h;
    J.col(k) = (residuals(samples, hi, fz0) - residuals(samples, lo, fz0)) / (2.0 * h);
  }
  return J;
}

struct LocalFit {
  FitVec x;
  double cost;
};

LocalFit levenberg_marquardt(std::span<const TyreSample> samples, FitVec x, double fz0,
                             int max_iterations) {
  Eigen::VectorXd r = residuals(samples, x, fz0);
  double cost = 0.5 * r.squaredNorm();
  double lambda = 1e-3;
  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::MatrixXd J = jacobian(samples, x, fz0);
    const FitVec grad = J.transpose() * r;
    const Eigen::Matrix<double, kFitDim, kFitDim> JtJ = J.transpose() * J;
    if (grad.lpNorm<Eigen::Infinity>() <= 1e-14 * std::max(1.0, cost)) break;

    bool accepted = false;
    for (int attempt = 0; attempt < 30 && !accepted; ++attempt) {
      Eigen::Matrix<double, kFitDim, kFitDim> A = JtJ;
      for (int k = 0; k < kFitDim; ++k) A(k, k) += lambda * std::max(JtJ(k, k), 1e-12);
      const FitVec step = A.ldlt().solve(-grad);
      const FitVec trial = project(x + step);
      const Eigen::VectorXd rt = residuals(samples, trial, fz0);
      const double ct = 0.5 * rt.squaredNorm();
      if (std::isfinite(ct) && ct < cost) {
        const double rel_step = (trial - x).cwiseAbs().cwiseQuotient(x.cwiseAbs().cwiseMax(1e-8)).maxCoeff();
        const double rel_drop = (cost - ct) / std::max(cost, 1e-300);
        x = trial;
        r = rt;
        cost = ct;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (rel_step < 1e-13 || rel_drop < 1e-16) return {x, cost};
      } else {
        lambda *= 4.0;
      }
    }
    if (!accepted) break;
  }
  return {x, cost};
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Latin hypercube over the start box: one stratum per start in each dimension.
std::vector<FitVec> latin_hypercube_starts(int n, unsigned long long seed) {
  std::mt19937_64 rng(seed);
  std::vector<FitVec> starts(static_cast<std::size_t>(n));
  for (int k = 0; k < kFitDim; ++k) {
    std::vector<int> strata(static_cast<std::size_t>(n));
    std::iota(strata.begin(), strata.end(), 0);
    for (int i = n - 1; i > 0; --i) {
      const auto j = static_cast<int>(rng() % static_cast<unsigned long long>(i + 1));
      std::swap(strata[static_cast<std::size_t>(i)], strata[static_cast<std::size_t>(j)]);
    }
    for (int i = 0; i < n; ++i) {
      const double u = (strata[static_cast<std::size_t>(i)] + uniform01(rng)) / n;
      starts[static_cast<std::size_t>(i)][k] = kStartLo[k] + u * (kStartHi[k] - kStartLo[k]);
    }
  }
  return starts;
}

void check_coverage(std::span<const TyreSample> samples, std::size_t min_samples) {
  if (samples.size() < min_samples) {
    throw IllPosedFitError("tyre fit needs at least " + std::to_string(min_samples) +
                           " samples, got " + std::to_string(samples.size()));
  }
  constexpr double kLinear = 2.0 * M_PI / 180.0;
  constexpr double kSaturated = 4.0 * M_PI / 180.0;
  std::size_t linear = 0, saturated = 0;
  for (const auto& s : samples) {
    if (std::abs(s.alpha) <= kLinear) ++linear;
    if (std::abs(s.alpha) >= kSaturated) ++saturated;
  }
  const std::size_t need = std::max<std::size_t>(1, samples.size() / 10);
  if (linear < need || saturated < need) {
    throw IllPosedFitError("tyre samples do not span the linear (|alpha| <= 2 deg: " +
                           std::to_string(linear) + ") and saturated (|alpha| >= 4 deg: " +
                           std::to_string(saturated) + ") regions; need " +
                           std::to_string(need) + " of each");
  }
}

}  // namespace

TyreFitReport fit_tyre_params(std::span<const TyreSample> samples, double fz0,
                              const TyreFitOptions& options) {
  check_coverage(samples, options.min_samples);
  const auto starts = latin_hypercube_starts(options.starts, options.seed);

  TyreFitReport report;
  report.n_samples = samples.size();
  double best = std::numeric_limits<double>::infinity();
  FitVec best_x = starts.front();
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const LocalFit fit = levenberg_marquardt(samples, starts[i], fz0, options.max_iterations);
    if (fit.cost < best) {
      best = fit.cost;
      best_x = fit.x;
      report.best_start = static_cast<int>(i);
    }
  }
  report.params = unpack(best_x, fz0);
  report.rms_residual_n = std::sqrt(2.0 * best / static_cast<double>(samples.size()));
  return report;
}

std::vector<TyreSample> generate_tyre_samples(const TyreParams& p, double max_alpha_rad,
                                              int n_alpha) {
  std::vector<TyreSample> out;
  const std::array<double, 4> loads{2000.0, 3500.0, 5000.0, 6500.0};
  const std::array<double, 5> fx_fraction{-0.6, -0.3, 0.0, 0.3, 0.6};
  for (double fz : loads) {
    for (double frac : fx_fraction) {
      for (int i = 0; i < n_alpha; ++i) {
        const double a = -max_alpha_rad + 2.0 * max_alpha_rad * i / (n_alpha - 1);
        const double fx = frac * p.mu * fz;
        out.push_back({a, fx, fz, lateral_force(TyreQuery{a, fx, fz}, p)});
      }
    }
  }
  return out;
}

std::vector<TyreSample> read_tyre_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open tyre sample file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("tyre sample file is empty: " + path);
  if (!header.empty() && header.back() == '\r') header.pop_back();

  static const std::array<std::string, 4> kColumns{"alpha_rad", "fx_n", "fz_n", "fy_n"};
  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  for (std::size_t i = 0; i < kColumns.size(); ++i) {
    if (i >= cols.size()) {
      throw std::runtime_error("tyre sample header is missing column '" + kColumns[i] + "'");
    }
    if (cols[i] != kColumns[i]) {
      throw std::runtime_error("tyre sample header column " + std::to_string(i + 1) + " is '" +
                               cols[i] + "', expected '" + kColumns[i] + "'");
    }
  }
  if (cols.size() > kColumns.size()) {
    throw std::runtime_error("tyre sample header has unexpected column '" + cols[kColumns.size()] +
                             "'");
  }

  std::vector<TyreSample> out;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::array<double, 4> v{};
    std::string cell;
    for (std::size_t i = 0; i < 4; ++i) {
      if (!std::getline(ss, cell, ',')) {
        throw std::runtime_error("line " + std::to_string(line_no) + ": missing value for '" +
                                 kColumns[i] + "'");
      }
      try {
        std::size_t used = 0;
        v[i] = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw std::runtime_error("line " + std::to_string(line_no) + ": bad value '" + cell +
                                 "' in column '" + kColumns[i] + "'");
      }
    }
    out.push_back({v[0], v[1], v[2], v[3]});
  }
  return out;
}

std::string tyre_samples_to_csv(std::span<const TyreSample> samples) {
  std::ostringstream os;
  os.precision(17);
  os << "alpha_rad,fx_n,fz_n,fy_n\n";
  for (const auto& s : samples) os << s.alpha << ',' << s.Fx << ',' << s.Fz << ',' << s.Fy << '\n';
  return os.str();
}

std::string tyre_fit_report_json(const TyreFitReport& report) {
  nlohmann::ordered_json j;
  j["params"] = {{"c1", report.params.c1}, {"c2", report.params.c2},
                 {"c3", report.params.c3}, {"Fz0", report.params.Fz0},
                 {"mu", report.params.mu}, {"zeta", report.params.zeta}};
  j["rms_residual_n"] = report.rms_residual_n;
  j["n_samples"] = report.n_samples;
  return j.dump(2) + "\n";
}

}  // namespace mpcctv
