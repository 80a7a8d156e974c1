#pragma once

// Peaks-over-threshold calibration of an extreme quantile of anomaly scores.
//
// Excesses over an initial empirical quantile t0 are fitted with a
// Generalized Pareto Distribution by maximum likelihood (Grimshaw's
// reduction to a one-dimensional root search), and the threshold is the
// GPD quantile at risk q.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>
#include <nlohmann/json.hpp>

#include "dada/error.hpp"

namespace dada::spot {

struct SpotConfig {
  double q = 1e-3;
  double init_quantile = 0.98;
  double init_fraction = 0.2;  // share of a stream used for calibration when no train split exists
  std::size_t min_init = 100;
  std::size_t min_excesses = 10;

  void validate() const {
    if (!(init_quantile > 0.0 && init_quantile < 1.0)) throw ConfigError("spot: init_quantile must lie in (0,1)");
    if (!(q > 0.0 && q < 1.0 - init_quantile)) throw ConfigError("spot: q must lie in (0, 1 - init_quantile)");
    if (!(init_fraction > 0.0 && init_fraction <= 1.0)) throw ConfigError("spot: init_fraction must lie in (0,1]");
  }
};

inline nlohmann::json to_json(const SpotConfig& c) {
  return {{"q", c.q}, {"init_quantile", c.init_quantile}, {"init_fraction", c.init_fraction},
          {"min_init", c.min_init}, {"min_excesses", c.min_excesses}};
}

inline SpotConfig spot_config_from_json(const nlohmann::json& j, SpotConfig c = {}) {
  const auto known = to_json(c);
  try {
    for (const auto& [key, _] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown spot key '" + key + "'");
    }
    c.q = j.value("q", c.q);
    c.init_quantile = j.value("init_quantile", c.init_quantile);
    c.init_fraction = j.value("init_fraction", c.init_fraction);
    c.min_init = j.value("min_init", c.min_init);
    c.min_excesses = j.value("min_excesses", c.min_excesses);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("spot config: ") + ex.what());
  }
  c.validate();
  return c;
}

struct GpdFit {
  double gamma = 0.0;
  double sigma = 1.0;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  std::string method = "grimshaw";
};

struct SpotResult {
  double threshold = 0.0;
  double t0 = 0.0;
  GpdFit fit;
  std::size_t n_init = 0;
  std::size_t n_excesses = 0;
  // Set when too few excesses forced the empirical (1 - q) quantile.
  bool fallback = false;
};

inline nlohmann::json to_json(const SpotResult& r) {
  return {{"threshold", r.threshold}, {"t0", r.t0}, {"gamma", r.fit.gamma}, {"sigma", r.fit.sigma},
          {"method", r.fit.method}, {"n_init", r.n_init}, {"n_excesses", r.n_excesses}, {"fallback", r.fallback}};
}

// Linear-interpolation empirical quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) return 0.0;
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double a = pos - static_cast<double>(lo);
  return (1.0 - a) * sorted[lo] + a * sorted[hi];
}

inline double gpd_log_likelihood(std::span<const double> y, double gamma, double sigma) {
  const auto n = static_cast<double>(y.size());
  if (sigma <= 0.0) return -std::numeric_limits<double>::infinity();
  if (std::abs(gamma) < 1e-12) {
    double s = 0.0;
    for (double v : y) s += v;
    return -n * std::log(sigma) - s / sigma;
  }
  const double tau = gamma / sigma;
  double acc = 0.0;
  for (double v : y) {
    const double t = 1.0 + tau * v;
    if (t <= 0.0) return -std::numeric_limits<double>::infinity();
    acc += std::log(t);
  }
  return -n * std::log(sigma) - (1.0 + 1.0 / gamma) * acc;
}

inline GpdFit method_of_moments(std::span<const double> y) {
  double m = 0.0;
  for (double v : y) m += v;
  m /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - m) * (v - m);
  var /= static_cast<double>(y.size());
  GpdFit f;
  f.method = "moments";
  if (var <= 0.0) {
    f.gamma = 0.0;
    f.sigma = std::max(m, std::numeric_limits<double>::min());
  } else {
    const double r = m * m / var;
    f.gamma = 0.5 * (1.0 - r);
    f.sigma = 0.5 * m * (r + 1.0);
  }
  f.log_likelihood = gpd_log_likelihood(y, f.gamma, f.sigma);
  return f;
}

// Grimshaw: with x = gamma / sigma, the likelihood equations reduce to
// u(x) v(x) = 1 with u = 1 + mean(log(1 + x y)), v = mean(1 / (1 + x y)).
// Candidate roots are bracketed on a grid in the two admissible intervals
// and refined; the exponential (gamma = 0) fit is always a candidate.
inline GpdFit fit_gpd(std::span<const double> y, int grid = 200) {
  double ymin = std::numeric_limits<double>::infinity(), ymax = 0.0, ymean = 0.0;
  for (double v : y) {
    ymin = std::min(ymin, v);
    ymax = std::max(ymax, v);
    ymean += v;
  }
  ymean /= static_cast<double>(y.size());

  GpdFit best;
  best.gamma = 0.0;
  best.sigma = ymean;
  best.log_likelihood = gpd_log_likelihood(y, 0.0, ymean);
  if (!(ymean > 0.0) || !(ymin > 0.0)) return best.sigma > 0.0 ? best : method_of_moments(y);

  const auto w = [&](double x) {
    double u = 0.0, v = 0.0;
    for (double s : y) {
      const double t = 1.0 + x * s;
      u += std::log(t);
      v += 1.0 / t;
    }
    const auto n = static_cast<double>(y.size());
    return (1.0 + u / n) * (v / n) - 1.0;
  };

  const double eps = std::min(1e-8, 0.5 / ymax);
  const double left_hi = 1.0 / ymax - eps;                        // x in (-1/ymax, 0)
  const double right_hi = 2.0 * (ymean - ymin) / (ymin * ymin);  // x in (0, right_hi)

  // Brackets on a geometric grid of |x| so roots close to zero are not missed.
  std::vector<double> roots;
  const auto scan = [&](double sign, double hi) {
    if (!(hi > eps)) return;
    const double ratio = std::pow(hi / eps, 1.0 / grid);
    double x0 = sign * eps, f0 = w(x0);
    for (int i = 1; i <= grid; ++i) {
      const double x1 = i == grid ? sign * hi : sign * eps * std::pow(ratio, i);
      const double f1 = w(x1);
      if (std::isfinite(f0) && std::isfinite(f1) && f0 * f1 < 0.0) {
        try {
          std::uintmax_t iters = 200;
          auto [a, b] = boost::math::tools::toms748_solve(w, std::min(x0, x1), std::max(x0, x1), x0 < x1 ? f0 : f1,
                                                          x0 < x1 ? f1 : f0,
                                                          boost::math::tools::eps_tolerance<double>(50), iters);
          roots.push_back(0.5 * (a + b));
        } catch (const std::exception&) {
          // unresolved bracket; other candidates remain
        }
      }
      x0 = x1;
      f0 = f1;
    }
  };
  scan(-1.0, left_hi);
  scan(1.0, right_hi);

  for (double x : roots) {
    double u = 0.0;
    for (double s : y) u += std::log(1.0 + x * s);
    const double gamma = u / static_cast<double>(y.size());
    const double sigma = gamma / x;
    const double ll = gpd_log_likelihood(y, gamma, sigma);
    if (std::isfinite(ll) && ll > best.log_likelihood) best = {gamma, sigma, ll, "grimshaw"};
  }
  if (!std::isfinite(best.sigma) || best.sigma <= 0.0 || !std::isfinite(best.gamma)) return method_of_moments(y);
  return best;
}

// POT quantile at risk q given n calibration points and n_excess excesses.
inline double pot_quantile(double t0, const GpdFit& f, double q, std::size_t n, std::size_t n_excess) {
  const double r = q * static_cast<double>(n) / static_cast<double>(n_excess);
  if (std::abs(f.gamma) < 1e-12) return t0 - f.sigma * std::log(r);
  return t0 + (f.sigma / f.gamma) * (std::pow(r, -f.gamma) - 1.0);
}

inline SpotResult spot_threshold(std::span<const double> init_scores, const SpotConfig& cfg) {
  cfg.validate();
  SpotResult res;
  res.n_init = init_scores.size();
  std::vector<double> sorted(init_scores.begin(), init_scores.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.empty()) throw EvaluationError("InsufficientExcesses", "empty calibration set");

  res.t0 = quantile_sorted(sorted, cfg.init_quantile);
  std::vector<double> excess;
  for (double s : sorted) {
    if (s > res.t0) excess.push_back(s - res.t0);
  }
  res.n_excesses = excess.size();

  if (sorted.size() < cfg.min_init || excess.size() < cfg.min_excesses) {
    res.fallback = true;
    res.fit.method = "empirical";
    res.threshold = quantile_sorted(sorted, 1.0 - cfg.q);
    return res;
  }
  res.fit = fit_gpd(excess);
  res.threshold = std::max(res.t0, pot_quantile(res.t0, res.fit, cfg.q, sorted.size(), excess.size()));
  if (!std::isfinite(res.threshold)) {
    res.fit = method_of_moments(excess);
    res.threshold = std::max(res.t0, pot_quantile(res.t0, res.fit, cfg.q, sorted.size(), excess.size()));
  }
  return res;
}

}  // namespace dada::spot
