#pragma once

// One JSON document per run with sections {dataset, net, train, inject,
// detect, eval, synth}. Dotted-key overrides are applied to the document
// before it is parsed, so they go through the same validation.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dada/error.hpp"
#include "dada/inject.hpp"
#include "dada/network.hpp"
#include "dada/pipeline.hpp"
#include "dada/spot.hpp"
#include "dada/synth.hpp"
#include "dada/train.hpp"

#ifndef DADA_VERSION
#define DADA_VERSION "0.1.0"
#endif

namespace dada {

inline constexpr const char* kVersion = DADA_VERSION;

struct DatasetPaths {
  std::string manifest;  // pretraining streams
  std::string target;    // fine-tuning normal streams
  std::string test;      // labelled test streams (optionally with calibration entries)
};

struct EvalConfig {
  std::vector<double> alphas{0.03};
};

struct RunConfig {
  std::string run_dir = "run";
  std::uint64_t seed = 0;
  DatasetPaths dataset;
  net::NetConfig net;
  train::TrainConfig train;
  inject::InjectionSpec inject;
  DetectConfig detect;
  EvalConfig eval;
  synth::SynthConfig synth;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

inline nlohmann::json detect_json(const DetectConfig& d) {
  auto j = spot::to_json(d.spot);
  j["n_pairs"] = d.n_pairs;
  j["mask_ratio"] = d.mask_ratio;
  j["seed"] = d.seed;
  return j;
}

inline DetectConfig detect_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"n_pairs", "mask_ratio", "seed", "q", "init_quantile", "init_fraction", "min_init", "min_excesses"},
                 "detect");
  DetectConfig d;
  nlohmann::json s = j;
  d.n_pairs = s.value("n_pairs", d.n_pairs);
  d.mask_ratio = s.value("mask_ratio", d.mask_ratio);
  d.seed = s.value("seed", d.seed);
  s.erase("n_pairs");
  s.erase("mask_ratio");
  s.erase("seed");
  d.spot = spot::spot_config_from_json(s);
  if (d.n_pairs < 2) throw ConfigError("detect: n_pairs must be >= 2");
  if (!(d.mask_ratio > 0.0 && d.mask_ratio < 1.0)) throw ConfigError("detect: mask_ratio must lie in (0,1)");
  return d;
}

inline nlohmann::json synth_json(const synth::SynthConfig& s) {
  return {{"length", s.length},
          {"series_per_family", s.series_per_family},
          {"calibration_length", s.calibration_length},
          {"held_out", synth::to_string(s.held_out)},
          {"noise", s.noise},
          {"seed", s.seed}};
}

inline synth::SynthConfig synth_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"length", "series_per_family", "calibration_length", "held_out", "noise", "seed"}, "synth");
  synth::SynthConfig s;
  s.length = j.value("length", s.length);
  s.series_per_family = j.value("series_per_family", s.series_per_family);
  s.calibration_length = j.value("calibration_length", s.calibration_length);
  if (j.contains("held_out")) s.held_out = synth::family_from_string(j.at("held_out").get<std::string>());
  s.noise = j.value("noise", s.noise);
  s.seed = j.value("seed", s.seed);
  if (s.length == 0 || s.series_per_family == 0) throw ConfigError("synth: length and series_per_family must be positive");
  if (!(s.noise >= 0.0)) throw ConfigError("synth: noise must be >= 0");
  return s;
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"run_dir", c.run_dir},
          {"seed", c.seed},
          {"dataset", {{"manifest", c.dataset.manifest}, {"target", c.dataset.target}, {"test", c.dataset.test}}},
          {"net", net::to_json(c.net)},
          {"train", train::to_json(c.train)},
          {"inject", inject::to_json(c.inject)},
          {"detect", detail::detect_json(c.detect)},
          {"eval", {{"alphas", c.eval.alphas}}},
          {"synth", detail::synth_json(c.synth)}};
}

// Sections that carry a seed inherit the top-level one unless they set
// their own.
inline RunConfig run_config_from_json(const nlohmann::json& doc) {
  detail::reject_unknown(doc, {"run_dir", "seed", "dataset", "net", "train", "inject", "detect", "eval", "synth"},
                         "run config");
  RunConfig c;
  try {
    c.run_dir = doc.value("run_dir", c.run_dir);
    c.seed = doc.value("seed", c.seed);
    const auto section = [&](const char* name) {
      nlohmann::json s = doc.contains(name) ? doc.at(name) : nlohmann::json::object();
      if (!s.is_object()) throw ConfigError(std::string(name) + " must be a JSON object");
      return s;
    };
    const auto seeded = [&](const char* name) {
      auto s = section(name);
      if (!s.contains("seed")) s["seed"] = c.seed;
      return s;
    };
    const auto ds = section("dataset");
    detail::reject_unknown(ds, {"manifest", "target", "test"}, "dataset");
    c.dataset.manifest = ds.value("manifest", std::string{});
    c.dataset.target = ds.value("target", std::string{});
    c.dataset.test = ds.value("test", std::string{});
    c.net = net::net_config_from_json(section("net"));
    c.train = train::train_config_from_json(seeded("train"));
    c.inject = inject::spec_from_json(seeded("inject"));
    c.detect = detail::detect_from_json(seeded("detect"));
    const auto ev = section("eval");
    detail::reject_unknown(ev, {"alphas"}, "eval");
    c.eval.alphas = ev.value("alphas", c.eval.alphas);
    for (double a : c.eval.alphas) {
      if (!(a > 0.0 && a < 1.0)) throw ConfigError("eval: alphas must lie in (0,1)");
    }
    c.synth = detail::synth_from_json(seeded("synth"));
    c.synth.injection = c.inject;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("run config: ") + ex.what());
  }
  return c;
}

// Applies "a.b.c=value"; value is parsed as JSON and kept as a string when
// it is not valid JSON.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("config " + path.string() + ": " + ex.what());
  }
}

// FNV-1a over the canonical (sorted-key) dump.
inline std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

inline RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                                 const std::vector<std::string>& overrides) {
  nlohmann::json doc = path ? read_json_file(*path) : nlohmann::json::object();
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is not set");
  if (!std::filesystem::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

}  // namespace dada
