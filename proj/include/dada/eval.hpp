#pragma once

// Event-aware evaluation: affiliation precision/recall/F1, ROC AUC and the
// top-quantile hit test.
//
// The affiliation metric is evaluated on integer timestamps. [0, T) is split
// into one zone per ground-truth event (each timestamp goes to its nearest
// event, ties to the earlier one). Inside a zone E around event J:
//   precision of a predicted t = P(dist(X, J) >= dist(t, J)), X uniform on E
//   recall of a truth point y  = P(|X - y| >= dist(y, predictions in E))
// Zone precision/recall are means over points; the overall values are means
// over zones (precision only over zones that contain predictions).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dada/dataset.hpp"
#include "dada/error.hpp"

namespace dada::eval {

struct Event {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::size_t length() const { return end - start; }
  bool operator==(const Event&) const = default;
};

using EventLabels = std::vector<Event>;

inline EventLabels binary_to_events(std::span<const std::uint8_t> y) {
  EventLabels ev;
  for (std::size_t i = 0; i < y.size();) {
    if (!y[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < y.size() && y[j]) ++j;
    ev.push_back({i, j});
    i = j;
  }
  return ev;
}

inline Labels events_to_binary(const EventLabels& ev, std::size_t t) {
  Labels y(t, 0);
  for (const auto& e : ev) {
    for (std::size_t i = e.start; i < e.end && i < t; ++i) y[i] = 1;
  }
  return y;
}

struct Affiliation {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool empty_prediction = false;
};

struct Zone {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline std::vector<Zone> affiliation_zones(const EventLabels& gt, std::size_t t) {
  std::vector<Zone> zones(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    zones[i].begin = i == 0 ? 0 : zones[i - 1].end;
    if (i + 1 == gt.size()) {
      zones[i].end = t;
    } else {
      // Last timestamp no farther from event i than from event i + 1.
      zones[i].end = (gt[i + 1].start + gt[i].end - 1) / 2 + 1;
    }
  }
  return zones;
}

inline std::size_t distance_to_event(std::size_t x, const Event& j) {
  if (x < j.start) return j.start - x;
  if (x >= j.end) return x - (j.end - 1);
  return 0;
}

inline Affiliation affiliation_prf(const EventLabels& pred, const EventLabels& gt, std::size_t t) {
  if (gt.empty()) throw EvaluationError("NoGroundTruthEvents", "affiliation needs at least one ground-truth event");
  if (t == 0) throw EvaluationError("NoGroundTruthEvents", "empty time range");
  const Labels yp = events_to_binary(pred, t);
  const auto zones = affiliation_zones(gt, t);

  double p_sum = 0.0, r_sum = 0.0;
  std::size_t p_zones = 0;
  for (std::size_t z = 0; z < zones.size(); ++z) {
    const auto [a, b] = zones[z];
    const Event& j = gt[z];
    const auto len = static_cast<double>(b - a);

    // Precision: survival of the distance-to-J of a uniform point in the zone.
    const auto survival_to_event = [&](std::size_t d) -> double {
      if (d == 0) return 1.0;
      std::size_t cnt = 0;
      if (j.start >= d && j.start - d >= a) cnt += j.start - d - a + 1;
      if (j.end - 1 + d < b) cnt += b - (j.end - 1 + d);
      return static_cast<double>(cnt) / len;
    };
    std::size_t n_pred = 0;
    double p_acc = 0.0;
    for (std::size_t x = a; x < b; ++x) {
      if (!yp[x]) continue;
      ++n_pred;
      p_acc += survival_to_event(distance_to_event(x, j));
    }
    if (n_pred == 0) continue;  // recall contribution is 0 for this zone
    p_sum += p_acc / static_cast<double>(n_pred);
    ++p_zones;

    // Recall: nearest prediction inside the zone for each truth point.
    const std::size_t none = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> prev(j.length(), none), next(j.length(), none);
    std::size_t last = none;
    for (std::size_t x = a; x < j.end; ++x) {
      if (yp[x]) last = x;
      if (x >= j.start) prev[x - j.start] = last;
    }
    last = none;
    for (std::size_t x = b; x-- > j.start;) {
      if (yp[x]) last = x;
      if (x < j.end) next[x - j.start] = last;
    }
    double r_acc = 0.0;
    for (std::size_t y = j.start; y < j.end; ++y) {
      std::size_t d = none;
      if (prev[y - j.start] != none) d = y - prev[y - j.start];
      if (next[y - j.start] != none) d = std::min(d, next[y - j.start] - y);
      if (d == 0) {
        r_acc += 1.0;
        continue;
      }
      const std::size_t lo = y >= a + (d - 1) ? y - (d - 1) : a;
      const std::size_t hi = std::min(b - 1, y + d - 1);
      r_acc += (len - static_cast<double>(hi - lo + 1)) / len;
    }
    r_sum += r_acc / static_cast<double>(j.length());
  }

  Affiliation res;
  res.empty_prediction = p_zones == 0;
  res.precision = p_zones ? p_sum / static_cast<double>(p_zones) : 0.0;
  res.recall = r_sum / static_cast<double>(zones.size());
  res.f1 = (res.precision + res.recall) > 0.0 ? 2.0 * res.precision * res.recall / (res.precision + res.recall) : 0.0;
  return res;
}

// Mann-Whitney AUC with ties counted as one half.
inline double auc_roc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw EvaluationError("LengthMismatch", "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]]) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw EvaluationError("SingleClass", "AUC needs both anomalous and normal points");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

// True when any of the ceil(alpha * T) highest-scoring timestamps falls in a
// ground-truth event. Equal scores keep their time order.
inline bool quantile_hit(std::span<const double> scores, const EventLabels& gt, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("quantile_hit: alpha must lie in (0,1]");
  const std::size_t n = scores.size();
  const auto top = std::min(n, static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n) - 1e-9)));
  const Labels y = events_to_binary(gt, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t k = 0; k < top; ++k) {
    if (y[idx[k]]) return true;
  }
  return false;
}

struct EvalCounts {
  std::size_t tp_events = 0;
  std::size_t total_events = 0;
  std::size_t predicted_points = 0;
};

struct EvalReport {
  double affiliation_p = 0.0;
  double affiliation_r = 0.0;
  double affiliation_f1 = 0.0;
  double auc_roc = std::numeric_limits<double>::quiet_NaN();
  EvalCounts counts;
  bool empty_prediction = false;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = {{"affiliation_p", r.affiliation_p},
                      {"affiliation_r", r.affiliation_r},
                      {"affiliation_f1", r.affiliation_f1},
                      {"auc_roc", nullptr},
                      {"counts",
                       {{"tp_events", r.counts.tp_events},
                        {"total_events", r.counts.total_events},
                        {"predicted_points", r.counts.predicted_points}}},
                      {"empty_prediction", r.empty_prediction}};
  if (std::isfinite(r.auc_roc)) j["auc_roc"] = r.auc_roc;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.affiliation_p = j.at("affiliation_p").get<double>();
  r.affiliation_r = j.at("affiliation_r").get<double>();
  r.affiliation_f1 = j.at("affiliation_f1").get<double>();
  if (!j.at("auc_roc").is_null()) r.auc_roc = j.at("auc_roc").get<double>();
  const auto& c = j.at("counts");
  r.counts = {c.at("tp_events").get<std::size_t>(), c.at("total_events").get<std::size_t>(),
              c.at("predicted_points").get<std::size_t>()};
  r.empty_prediction = j.value("empty_prediction", false);
  return r;
}

// Threshold metrics use `decisions` as given; AUC uses the raw scores and is
// left NaN when labels hold a single class.
inline EvalReport evaluate(std::span<const double> scores, std::span<const std::uint8_t> decisions,
                           std::span<const std::uint8_t> labels) {
  if (decisions.size() != labels.size() || scores.size() != labels.size()) {
    throw EvaluationError("LengthMismatch", "scores, decisions and labels must have equal length");
  }
  const auto gt = binary_to_events(labels);
  const auto pred = binary_to_events(decisions);
  EvalReport r;
  const auto aff = affiliation_prf(pred, gt, labels.size());
  r.affiliation_p = aff.precision;
  r.affiliation_r = aff.recall;
  r.affiliation_f1 = aff.f1;
  r.empty_prediction = aff.empty_prediction;
  r.counts.total_events = gt.size();
  r.counts.predicted_points = static_cast<std::size_t>(std::count(decisions.begin(), decisions.end(), 1));
  for (const auto& e : gt) {
    if (std::any_of(decisions.begin() + static_cast<std::ptrdiff_t>(e.start),
                    decisions.begin() + static_cast<std::ptrdiff_t>(e.end), [](auto v) { return v != 0; })) {
      ++r.counts.tp_events;
    }
  }
  try {
    r.auc_roc = auc_roc(scores, labels);
  } catch (const EvaluationError&) {
    r.auc_roc = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

}  // namespace dada::eval
