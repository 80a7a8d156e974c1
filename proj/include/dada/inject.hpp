#pragma once

// Synthetic anomaly injection: eight segment operators plus the
// pick-segment / pick-type / no-overlap loop that corrupts a clean series.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dada/dataset.hpp"
#include "dada/error.hpp"

namespace dada::inject {

enum class AnomalyType { kHMirror, kVMirror, kScale, kOutlier, kNoise, kCompress, kStretch, kPattern };

inline constexpr std::array<AnomalyType, 8> kAllTypes = {
    AnomalyType::kHMirror,  AnomalyType::kVMirror,  AnomalyType::kScale,   AnomalyType::kOutlier,
    AnomalyType::kNoise,    AnomalyType::kCompress, AnomalyType::kStretch, AnomalyType::kPattern};

inline std::string to_string(AnomalyType t) {
  switch (t) {
    case AnomalyType::kHMirror: return "hmirror";
    case AnomalyType::kVMirror: return "vmirror";
    case AnomalyType::kScale: return "scale";
    case AnomalyType::kOutlier: return "outlier";
    case AnomalyType::kNoise: return "noise";
    case AnomalyType::kCompress: return "compress";
    case AnomalyType::kStretch: return "stretch";
    case AnomalyType::kPattern: return "pattern";
  }
  return "?";
}

inline AnomalyType type_from_string(const std::string& s) {
  for (auto t : kAllTypes) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("unknown anomaly type '" + s + "'");
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct IntRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

struct ParamRanges {
  // Scale factors are drawn from the shrinking or the expanding range with equal odds.
  Range scale_shrink{0.2, 0.5};
  Range scale_expand{2.0, 5.0};
  Range noise_sigma{0.3, 1.0};
  Range outlier_magnitude{3.0, 6.0};
  IntRange outlier_points{1, 5};
  IntRange warp_factor{2, 4};  // compress / stretch
};

struct InjectionSpec {
  std::vector<AnomalyType> types{kAllTypes.begin(), kAllTypes.end()};
  double target_ratio = 0.05;
  IntRange subseq_len{20, 100};
  ParamRanges params;
  std::uint64_t seed = 0;

  void validate() const {
    if (types.empty()) throw ConfigError("injection: no anomaly types");
    if (!(target_ratio > 0.0 && target_ratio < 1.0)) throw ConfigError("injection: target_ratio must be in (0,1)");
    if (subseq_len.lo == 0 || subseq_len.lo > subseq_len.hi) throw ConfigError("injection: bad subsequence length range");
    const auto bad = [](const Range& r) { return !(r.lo <= r.hi); };
    if (bad(params.scale_shrink) || bad(params.scale_expand) || bad(params.noise_sigma) ||
        bad(params.outlier_magnitude) || params.outlier_points.lo > params.outlier_points.hi ||
        params.outlier_points.lo == 0 || params.warp_factor.lo > params.warp_factor.hi ||
        params.warp_factor.lo == 0) {
      throw ConfigError("injection: empty parameter range");
    }
  }
};

struct InjectionRecord {
  AnomalyType type;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::map<std::string, double> params;
};

struct InjectionResult {
  std::vector<double> values;
  Labels labels;
  std::vector<InjectionRecord> log;
};

using Segment = std::vector<double>;

namespace detail {

inline double mean(std::span<const double> s) {
  double m = 0.0;
  for (double v : s) m += v;
  return s.empty() ? 0.0 : m / static_cast<double>(s.size());
}

inline double stddev(std::span<const double> s) {
  const double m = mean(s);
  double acc = 0.0;
  for (double v : s) acc += (v - m) * (v - m);
  return s.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(s.size()));
}

// Linear interpolation of s at fractional index x; extrapolates linearly
// past either end.
inline double lerp_at(std::span<const double> s, double x) {
  const std::size_t n = s.size();
  if (n == 1) return s[0];
  std::size_t i = x <= 0.0 ? 0 : static_cast<std::size_t>(std::floor(x));
  if (i >= n - 1) i = n - 2;
  const double a = x - static_cast<double>(i);
  return (1.0 - a) * s[i] + a * s[i + 1];
}

}  // namespace detail

inline Segment apply_hmirror(std::span<const double> seg) { return {seg.rbegin(), seg.rend()}; }

inline Segment apply_vmirror(std::span<const double> seg) {
  const double m = detail::mean(seg);
  Segment out(seg.size());
  for (std::size_t i = 0; i < seg.size(); ++i) out[i] = 2.0 * m - seg[i];
  return out;
}

inline Segment apply_scale(std::span<const double> seg, double factor) {
  const double m = detail::mean(seg);
  Segment out(seg.size());
  for (std::size_t i = 0; i < seg.size(); ++i) out[i] = m + factor * (seg[i] - m);
  return out;
}

// Adds +/- magnitude * scale to n_points distinct positions. scale defaults
// to the segment's own standard deviation.
template <class Rng>
Segment apply_outlier(std::span<const double> seg, double magnitude, std::size_t n_points, Rng& rng,
                      double scale = -1.0) {
  if (scale < 0.0) scale = detail::stddev(seg);
  Segment out(seg.begin(), seg.end());
  n_points = std::min(n_points, seg.size());
  std::vector<std::size_t> pos(seg.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  for (std::size_t k = 0; k < n_points; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pos.size() - 1);
    std::swap(pos[k], pos[pick(rng)]);
    const double sign = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
    out[pos[k]] += sign * magnitude * scale;
  }
  return out;
}

template <class Rng>
Segment apply_noise(std::span<const double> seg, double sigma, Rng& rng) {
  const double sd = sigma * detail::stddev(seg);
  Segment out(seg.begin(), seg.end());
  if (sd <= 0.0) return out;
  std::normal_distribution<double> n01(0.0, 1.0);
  for (double& v : out) v += sd * n01(rng);
  return out;
}

inline Segment apply_pattern(std::span<const double> seg, std::span<const double> donor) {
  if (donor.size() != seg.size()) throw ConfigError("pattern donor length differs from segment");
  return {donor.begin(), donor.end()};
}

// Keeps every factor-th point and linearly re-interpolates the dropped ones
// (extrapolating past the last kept point). Length is preserved.
inline Segment apply_compress(std::span<const double> seg, std::size_t factor) {
  if (factor <= 1 || seg.size() < 2) return {seg.begin(), seg.end()};
  std::vector<double> kept;
  for (std::size_t i = 0; i < seg.size(); i += factor) kept.push_back(seg[i]);
  if (kept.size() < 2) return Segment(seg.size(), kept.front());
  Segment out(seg.size());
  for (std::size_t i = 0; i < seg.size(); ++i) {
    out[i] = detail::lerp_at(kept, static_cast<double>(i) / static_cast<double>(factor));
  }
  return out;
}

// Interpolates onto a factor-times longer grid and keeps the leading part, so
// one period of the input spans factor periods' worth of samples.
inline Segment apply_stretch(std::span<const double> seg, std::size_t factor) {
  if (factor <= 1 || seg.size() < 2) return {seg.begin(), seg.end()};
  Segment out(seg.size());
  for (std::size_t i = 0; i < seg.size(); ++i) {
    out[i] = detail::lerp_at(seg, static_cast<double>(i) / static_cast<double>(factor));
  }
  return out;
}

inline InjectionResult inject(std::span<const double> values, const InjectionSpec& spec) {
  spec.validate();
  const std::size_t t = values.size();
  if (t < spec.subseq_len.hi) {
    throw DataError("SeriesTooShort", "series of length " + std::to_string(t) +
                                          " shorter than the maximum injected subsequence");
  }

  InjectionResult res;
  res.values.assign(values.begin(), values.end());
  res.labels.assign(t, 0);

  std::mt19937_64 rng(spec.seed);
  const double series_sd = std::max(detail::stddev(values), kStdFloor);
  const double mean_len = 0.5 * static_cast<double>(spec.subseq_len.lo + spec.subseq_len.hi);
  const double expected_segments = std::ceil(spec.target_ratio * static_cast<double>(t) / mean_len);
  const std::size_t budget = static_cast<std::size_t>(100.0 * std::max(1.0, expected_segments));

  std::size_t labelled = 0;
  std::size_t attempts = 0;
  const auto uniform = [&](const Range& r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); };
  const auto uniform_int = [&](const IntRange& r) { return std::uniform_int_distribution<std::size_t>(r.lo, r.hi)(rng); };

  while (static_cast<double>(labelled) < spec.target_ratio * static_cast<double>(t)) {
    if (attempts++ >= budget) {
      throw DataError("RetryBudgetExhausted", "could not reach anomaly ratio " +
                                                  std::to_string(spec.target_ratio) + " without overlap");
    }
    const std::size_t len = uniform_int(spec.subseq_len);
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, t - len)(rng);
    const auto lab_begin = res.labels.begin() + static_cast<std::ptrdiff_t>(start);
    if (std::any_of(lab_begin, lab_begin + static_cast<std::ptrdiff_t>(len), [](auto v) { return v != 0; })) continue;

    const auto type = spec.types[std::uniform_int_distribution<std::size_t>(0, spec.types.size() - 1)(rng)];
    const std::span<const double> seg(res.values.data() + start, len);
    InjectionRecord rec{type, start, start + len, {}};
    Segment out;
    switch (type) {
      case AnomalyType::kHMirror: out = apply_hmirror(seg); break;
      case AnomalyType::kVMirror: out = apply_vmirror(seg); break;
      case AnomalyType::kScale: {
        const bool expand = std::bernoulli_distribution(0.5)(rng);
        const double f = uniform(expand ? spec.params.scale_expand : spec.params.scale_shrink);
        rec.params["factor"] = f;
        out = apply_scale(seg, f);
        break;
      }
      case AnomalyType::kOutlier: {
        const double mag = uniform(spec.params.outlier_magnitude);
        const std::size_t n = uniform_int(spec.params.outlier_points);
        rec.params["magnitude"] = mag;
        rec.params["n_points"] = static_cast<double>(n);
        const double sd = detail::stddev(seg);
        out = apply_outlier(seg, mag, n, rng, sd > kStdFloor ? sd : series_sd);
        break;
      }
      case AnomalyType::kNoise: {
        const double sigma = uniform(spec.params.noise_sigma);
        rec.params["sigma"] = sigma;
        out = apply_noise(seg, sigma, rng);
        break;
      }
      case AnomalyType::kCompress:
      case AnomalyType::kStretch: {
        const std::size_t f = uniform_int(spec.params.warp_factor);
        rec.params["factor"] = static_cast<double>(f);
        out = type == AnomalyType::kCompress ? apply_compress(seg, f) : apply_stretch(seg, f);
        break;
      }
      case AnomalyType::kPattern: {
        // Donor slice from elsewhere in the series, preferring one that does
        // not overlap the target segment.
        std::size_t donor = 0;
        for (int tries = 0; tries < 32; ++tries) {
          donor = std::uniform_int_distribution<std::size_t>(0, t - len)(rng);
          if (donor + len <= start || donor >= start + len) break;
        }
        rec.params["donor_start"] = static_cast<double>(donor);
        const std::vector<double> donor_copy(res.values.begin() + static_cast<std::ptrdiff_t>(donor),
                                             res.values.begin() + static_cast<std::ptrdiff_t>(donor + len));
        out = apply_pattern(seg, donor_copy);
        break;
      }
    }
    std::copy(out.begin(), out.end(), res.values.begin() + static_cast<std::ptrdiff_t>(start));
    std::fill_n(lab_begin, len, std::uint8_t{1});
    labelled += len;
    res.log.push_back(std::move(rec));
  }
  return res;
}

// Injects every channel independently (seed offset by channel index); point
// labels are the union across channels.
inline std::pair<TimeSeries, std::vector<std::vector<InjectionRecord>>> inject_series(
    const TimeSeries& ts, const InjectionSpec& spec) {
  TimeSeries out = ts;
  Labels labels(ts.length(), 0);
  std::vector<std::vector<InjectionRecord>> logs;
  for (std::size_t c = 0; c < ts.channels(); ++c) {
    InjectionSpec s = spec;
    s.seed = spec.seed + 0x9E3779B97F4A7C15ULL * c;
    std::vector<double> col(ts.length());
    for (std::size_t i = 0; i < col.size(); ++i) col[i] = ts.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    auto r = inject(col, s);
    for (std::size_t i = 0; i < col.size(); ++i) {
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = r.values[i];
      labels[i] = static_cast<std::uint8_t>(labels[i] | r.labels[i]);
    }
    logs.push_back(std::move(r.log));
  }
  out.labels = std::move(labels);
  return {std::move(out), std::move(logs)};
}

// ---- JSON ----

inline nlohmann::json to_json(const InjectionRecord& r) {
  return {{"type", to_string(r.type)}, {"start", r.start}, {"end", r.end}, {"params", r.params}};
}

inline nlohmann::json to_json(const InjectionSpec& s) {
  nlohmann::json types = nlohmann::json::array();
  for (auto t : s.types) types.push_back(to_string(t));
  const auto& p = s.params;
  return {{"types", types},
          {"target_ratio", s.target_ratio},
          {"subseq_len", {s.subseq_len.lo, s.subseq_len.hi}},
          {"scale_shrink", {p.scale_shrink.lo, p.scale_shrink.hi}},
          {"scale_expand", {p.scale_expand.lo, p.scale_expand.hi}},
          {"noise_sigma", {p.noise_sigma.lo, p.noise_sigma.hi}},
          {"outlier_magnitude", {p.outlier_magnitude.lo, p.outlier_magnitude.hi}},
          {"outlier_points", {p.outlier_points.lo, p.outlier_points.hi}},
          {"warp_factor", {p.warp_factor.lo, p.warp_factor.hi}},
          {"seed", s.seed}};
}

inline InjectionSpec spec_from_json(const nlohmann::json& j) {
  InjectionSpec s;
  auto range = [&](const char* key, Range& r) {
    if (j.contains(key)) r = {j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>()};
  };
  auto irange = [&](const char* key, IntRange& r) {
    if (j.contains(key)) r = {j.at(key).at(0).get<std::size_t>(), j.at(key).at(1).get<std::size_t>()};
  };
  static const std::vector<std::string> known = {"types", "target_ratio", "subseq_len", "scale_shrink",
                                                 "scale_expand", "noise_sigma", "outlier_magnitude",
                                                 "outlier_points", "warp_factor", "seed"};
  try {
    for (const auto& [key, _] : j.items()) {
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw ConfigError("unknown inject key '" + key + "'");
      }
    }
    if (j.contains("types")) {
      s.types.clear();
      for (const auto& t : j.at("types")) s.types.push_back(type_from_string(t.get<std::string>()));
    }
    s.target_ratio = j.value("target_ratio", s.target_ratio);
    irange("subseq_len", s.subseq_len);
    range("scale_shrink", s.params.scale_shrink);
    range("scale_expand", s.params.scale_expand);
    range("noise_sigma", s.params.noise_sigma);
    range("outlier_magnitude", s.params.outlier_magnitude);
    irange("outlier_points", s.params.outlier_points);
    irange("warp_factor", s.params.warp_factor);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("inject config: ") + ex.what());
  }
  s.validate();
  return s;
}

}  // namespace dada::inject
