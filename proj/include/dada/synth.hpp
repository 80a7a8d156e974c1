#pragma once

// Synthetic multi-domain corpus: four signal families, three series each.
// Three families provide clean normal streams plus injected abnormal
// streams for pretraining; the fourth is held out as labelled test streams,
// each preceded by a short clean calibration split.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dada/dataset.hpp"
#include "dada/inject.hpp"

namespace dada::synth {

enum class Family { kSine, kSawtooth, kAutoregressive, kAmplitudeModulated };

inline constexpr std::array<Family, 4> kFamilies = {Family::kSine, Family::kSawtooth, Family::kAutoregressive,
                                                    Family::kAmplitudeModulated};

inline std::string to_string(Family f) {
  switch (f) {
    case Family::kSine: return "sine";
    case Family::kSawtooth: return "sawtooth";
    case Family::kAutoregressive: return "ar";
    case Family::kAmplitudeModulated: return "am";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  for (auto f : kFamilies) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown synthetic family '" + s + "'");
}

struct SynthConfig {
  std::size_t length = 20000;
  std::size_t series_per_family = 3;
  std::size_t calibration_length = 4000;
  Family held_out = Family::kAmplitudeModulated;
  double noise = 0.05;  // relative to amplitude
  inject::InjectionSpec injection{};
  std::uint64_t seed = 7;
};

inline std::uint64_t stream_seed(std::uint64_t seed, Family f, std::size_t series, std::uint64_t salt) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(f) + 1);
  x ^= (static_cast<std::uint64_t>(series) + 1) * 0xBF58476D1CE4E5B9ULL;
  x ^= salt * 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

// One realization of a family; `rng` fixes both shape parameters and noise.
inline std::vector<double> generate(Family f, std::size_t n, double noise, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto pick = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> x(n);
  double amp = 1.0;
  switch (f) {
    case Family::kSine: {
      amp = pick(0.5, 2.0);
      const double p1 = pick(40.0, 100.0), p2 = pick(150.0, 400.0);
      const double a2 = amp * pick(0.1, 0.5), ph1 = pick(0.0, two_pi), ph2 = pick(0.0, two_pi);
      const double offset = pick(-1.0, 1.0);
      for (std::size_t t = 0; t < n; ++t) {
        const auto s = static_cast<double>(t);
        x[t] = offset + amp * std::sin(two_pi * s / p1 + ph1) + a2 * std::sin(two_pi * s / p2 + ph2);
      }
      break;
    }
    case Family::kSawtooth: {
      amp = pick(0.5, 2.0);
      const double period = pick(50.0, 150.0), phase = pick(0.0, 1.0);
      const double drift = pick(-2.0, 2.0) * amp / static_cast<double>(n);
      for (std::size_t t = 0; t < n; ++t) {
        const double c = static_cast<double>(t) / period + phase;
        x[t] = amp * (2.0 * (c - std::floor(c)) - 1.0) + drift * static_cast<double>(t);
      }
      break;
    }
    case Family::kAutoregressive: {
      // AR(2) with complex roots: quasi-periodic, randomly varying amplitude.
      const double r = pick(0.95, 0.99), period = pick(30.0, 100.0);
      const double phi1 = 2.0 * r * std::cos(two_pi / period), phi2 = -r * r;
      std::normal_distribution<double> e(0.0, 0.1);
      double x1 = 0.0, x2 = 0.0;
      for (std::size_t t = 0; t < n + 500; ++t) {
        const double v = phi1 * x1 + phi2 * x2 + e(rng);
        x2 = x1;
        x1 = v;
        if (t >= 500) x[t - 500] = v;
      }
      amp = 0.0;  // stochastic already
      break;
    }
    case Family::kAmplitudeModulated: {
      amp = pick(0.5, 2.0);
      const double carrier = pick(30.0, 80.0), mod = pick(400.0, 1500.0), depth = pick(0.2, 0.5);
      const double ph = pick(0.0, two_pi);
      for (std::size_t t = 0; t < n; ++t) {
        const auto s = static_cast<double>(t);
        x[t] = amp * (1.0 + depth * std::sin(two_pi * s / mod + ph)) * std::sin(two_pi * s / carrier);
      }
      break;
    }
  }
  if (amp > 0.0 && noise > 0.0) {
    std::normal_distribution<double> e(0.0, noise * amp);
    for (auto& v : x) v += e(rng);
  }
  return x;
}

inline TimeSeries to_series(std::string name, std::string domain, const std::vector<double>& x) {
  TimeSeries ts;
  ts.name = std::move(name);
  ts.domain_tag = std::move(domain);
  ts.values = RowMatrix(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t t = 0; t < x.size(); ++t) ts.values(static_cast<Eigen::Index>(t), 0) = x[t];
  return ts;
}

struct HeldOutSeries {
  std::filesystem::path calibration;  // clean, unlabelled
  std::filesystem::path test;         // labelled
};

struct Corpus {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::vector<HeldOutSeries> held_out;
};

inline std::string file_stem(Family f, std::size_t i, const char* kind) {
  return to_string(f) + "_" + std::to_string(i) + "_" + kind;
}

inline Corpus write_corpus(const std::filesystem::path& dir, const SynthConfig& cfg) {
  cfg.injection.validate();
  std::filesystem::create_directories(dir);
  DatasetManifest train, test;
  train.seed = test.seed = cfg.seed;
  Corpus corpus;
  for (auto f : kFamilies) {
    for (std::size_t i = 0; i < cfg.series_per_family; ++i) {
      const std::string domain = to_string(f);
      if (f == cfg.held_out) {
        // Calibration split and test stream come from one realization.
        std::mt19937_64 rng(stream_seed(cfg.seed, f, i, 0));
        const auto full = generate(f, cfg.calibration_length + cfg.length, cfg.noise, rng);
        const std::vector<double> calib(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(cfg.calibration_length));
        const std::vector<double> rest(full.begin() + static_cast<std::ptrdiff_t>(cfg.calibration_length), full.end());
        auto spec = cfg.injection;
        spec.seed = stream_seed(cfg.seed, f, i, 2);
        const auto [ts, _] = inject::inject_series(to_series(file_stem(f, i, "test"), domain, rest), spec);
        HeldOutSeries h{dir / (file_stem(f, i, "calib") + ".csv"), dir / (file_stem(f, i, "test") + ".csv")};
        write_csv(h.calibration, to_series(file_stem(f, i, "calib"), domain, calib));
        write_csv(h.test, ts);
        test.entries.push_back({h.calibration.filename().string(), Role::kNormal, domain, "csv"});
        test.entries.push_back({h.test.filename().string(), Role::kTest, domain, "csv"});
        corpus.held_out.push_back(std::move(h));
        continue;
      }
      std::mt19937_64 rng_n(stream_seed(cfg.seed, f, i, 0));
      std::mt19937_64 rng_a(stream_seed(cfg.seed, f, i, 1));
      const auto normal = generate(f, cfg.length, cfg.noise, rng_n);
      const auto base = generate(f, cfg.length, cfg.noise, rng_a);
      auto spec = cfg.injection;
      spec.seed = stream_seed(cfg.seed, f, i, 2);
      const auto [abnormal, _] = inject::inject_series(to_series(file_stem(f, i, "abnormal"), domain, base), spec);
      const auto pn = file_stem(f, i, "normal") + ".csv";
      const auto pa = file_stem(f, i, "abnormal") + ".csv";
      write_csv(dir / pn, to_series(file_stem(f, i, "normal"), domain, normal));
      write_csv(dir / pa, abnormal);
      train.entries.push_back({pn, Role::kNormal, domain, "csv"});
      train.entries.push_back({pa, Role::kAbnormal, domain, "csv"});
    }
  }
  corpus.train_manifest = dir / "train_manifest.json";
  corpus.test_manifest = dir / "test_manifest.json";
  save_manifest(corpus.train_manifest, train);
  save_manifest(corpus.test_manifest, test);
  return corpus;
}

}  // namespace dada::synth
