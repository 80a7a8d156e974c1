#pragma once

// End-to-end helpers: score a labelled stream with a SPOT threshold
// calibrated on a clean split (or on the stream head), and evaluate.

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "dada/dataset.hpp"
#include "dada/detect.hpp"
#include "dada/eval.hpp"
#include "dada/network.hpp"
#include "dada/spot.hpp"

namespace dada {

struct DetectConfig {
  int n_pairs = 5;
  double mask_ratio = 0.5;
  std::uint64_t seed = 0;
  spot::SpotConfig spot{};
};

struct StreamResult {
  detect::ScoreSeries scores;
  eval::EvalReport report;
};

template <class T>
detect::ScoreSeries score_and_threshold(const net::Network<T>& model, const TimeSeries& test,
                                        const std::optional<TimeSeries>& calibration, const DetectConfig& dc) {
  auto ss = detect::score_series(test, model, dc.n_pairs, dc.seed, dc.mask_ratio);
  if (calibration) {
    const auto cs = detect::score_series(*calibration, model, dc.n_pairs, dc.seed ^ 0x5EEDULL, dc.mask_ratio);
    return detect::threshold_series(std::move(ss), dc.spot, std::span<const double>(cs.scores));
  }
  return detect::threshold_series(std::move(ss), dc.spot);
}

template <class T>
StreamResult evaluate_stream(const net::Network<T>& model, const TimeSeries& test,
                             const std::optional<TimeSeries>& calibration, const DetectConfig& dc) {
  if (!test.labels) throw DataError("MalformedFile", test.name + " has no label column");
  StreamResult r;
  r.scores = score_and_threshold(model, test, calibration, dc);
  r.report = eval::evaluate(r.scores.scores, r.scores.decisions, *test.labels);
  return r;
}

// A labelled test stream and its clean calibration split, if any.
struct TestStream {
  ManifestEntry test;
  std::optional<ManifestEntry> calibration;
};

// The k-th test entry of a domain pairs with the k-th normal entry of the
// same domain.
inline std::vector<TestStream> test_streams(const DatasetManifest& m) {
  std::vector<TestStream> out;
  std::map<std::string, std::vector<ManifestEntry>> normals;
  std::map<std::string, std::size_t> used;
  for (const auto& e : m.entries) {
    if (e.role == Role::kNormal) normals[e.domain_tag].push_back(e);
  }
  for (const auto& e : m.entries) {
    if (e.role != Role::kTest) continue;
    TestStream s{e, std::nullopt};
    auto& k = used[e.domain_tag];
    const auto it = normals.find(e.domain_tag);
    if (it != normals.end() && k < it->second.size()) s.calibration = it->second[k++];
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("EmptyStream", "manifest has no test entries");
  return out;
}

template <class T>
StreamResult evaluate_stream(const net::Network<T>& model, const TestStream& s, const DetectConfig& dc) {
  std::optional<TimeSeries> calib;
  if (s.calibration) calib = load(*s.calibration);
  return evaluate_stream(model, load(s.test), calib, dc);
}

inline eval::EvalReport mean_report(const std::vector<eval::EvalReport>& reports) {
  eval::EvalReport m;
  if (reports.empty()) return m;
  const auto n = static_cast<double>(reports.size());
  m.auc_roc = 0.0;
  for (const auto& r : reports) {
    m.affiliation_p += r.affiliation_p / n;
    m.affiliation_r += r.affiliation_r / n;
    m.affiliation_f1 += r.affiliation_f1 / n;
    m.auc_roc += r.auc_roc / n;
    m.counts.tp_events += r.counts.tp_events;
    m.counts.total_events += r.counts.total_events;
    m.counts.predicted_points += r.counts.predicted_points;
    m.empty_prediction = m.empty_prediction || r.empty_prediction;
  }
  return m;
}

}  // namespace dada
