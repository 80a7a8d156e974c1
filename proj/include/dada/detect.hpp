#pragma once

// Inference-time scoring: reconstructions under several complementary mask
// pairs (normal decoder only, router noise off); the per-point score is the
// population variance of the reconstructed values in original units.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dada/dataset.hpp"
#include "dada/error.hpp"
#include "dada/mask.hpp"
#include "dada/network.hpp"
#include "dada/spot.hpp"
#include "dada/train.hpp"

namespace dada::detect {

using net::Index;
using net::Mat;

struct ScoreSeries {
  std::vector<double> scores;
  double threshold = std::numeric_limits<double>::quiet_NaN();
  Labels decisions;
  std::optional<RowMatrix> per_channel_scores;  // T x C
  std::optional<spot::SpotResult> spot;
};

// Population variance across reconstructions, per point.
inline std::vector<double> reconstruction_variance(const std::vector<std::vector<double>>& recons) {
  if (recons.empty()) return {};
  const std::size_t w = recons.front().size();
  const auto k = static_cast<double>(recons.size());
  std::vector<double> out(w, 0.0);
  for (std::size_t t = 0; t < w; ++t) {
    double mean = 0.0;
    for (const auto& r : recons) mean += r[t];
    mean /= k;
    double var = 0.0;
    for (const auto& r : recons) var += (r[t] - mean) * (r[t] - mean);
    out[t] = var / k;
  }
  return out;
}

inline std::uint64_t mask_seed(std::uint64_t seed, std::uint64_t window, std::uint64_t pair) {
  std::uint64_t x = seed ^ (window * 0x9E3779B97F4A7C15ULL) ^ (pair * 0xC2B2AE3D27D4EB4FULL);
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 29;
  return x;
}

// Scores every window of a normalized batch; returns N x W scores in the
// batch's original units. Window k uses masks seeded by (seed, first_id + k).
template <class T>
RowMatrix score_windows(const net::Network<T>& model, const WindowBatch& batch, int n_pairs, std::uint64_t seed,
                        std::uint64_t first_id = 0, double mask_ratio = 0.5, Index chunk = 64) {
  if (n_pairs < 2) throw ConfigError("score: n_pairs must be >= 2");
  const auto& nc = model.config();
  if (static_cast<int>(batch.width()) != nc.window) throw ConfigError("score: window width differs from the model");
  const Index n = batch.windows.rows();
  const auto p = static_cast<std::size_t>(nc.patches());
  RowMatrix scores(n, nc.window);

  for (Index lo = 0; lo < n; lo += chunk) {
    const Index m = std::min(chunk, n - lo);
    // Rows: for each pair j, [m visible-branch inputs; m complement inputs].
    Mat<T> stacked(2 * n_pairs * m, nc.window);
    std::vector<Mat<T>> vis(static_cast<std::size_t>(n_pairs));
    const Mat<T> x = batch.windows.middleRows(lo, m).template cast<T>();
    for (int j = 0; j < n_pairs; ++j) {
      std::vector<Mask> masks;
      for (Index k = 0; k < m; ++k) {
        std::mt19937_64 rng(mask_seed(seed, first_id + static_cast<std::uint64_t>(lo + k), static_cast<std::uint64_t>(j)));
        masks.push_back(sample_mask(p, mask_ratio, rng));
      }
      vis[static_cast<std::size_t>(j)] = train::detail::broadcast_masks<T>(masks, nc.window, nc.patch);
      stacked.middleRows(2 * j * m, 2 * m) = train::stack_masked(x, vis[static_cast<std::size_t>(j)]);
    }
    const Mat<T> recon = model.reconstruct(stacked);

    std::vector<RowMatrix> combined;
    for (int j = 0; j < n_pairs; ++j) {
      const Mat<T> c = train::combine<T>(recon.middleRows(2 * j * m, 2 * m), vis[static_cast<std::size_t>(j)]);
      std::vector<WindowStats> stats(batch.stats.begin() + lo, batch.stats.begin() + lo + m);
      combined.push_back(denormalize(c.template cast<double>(), stats));
    }
    for (Index k = 0; k < m; ++k) {
      std::vector<std::vector<double>> recons;
      for (const auto& c : combined) recons.emplace_back(c.row(k).data(), c.row(k).data() + nc.window);
      const auto var = reconstruction_variance(recons);
      for (int t = 0; t < nc.window; ++t) scores(lo + k, t) = var[static_cast<std::size_t>(t)];
    }
  }
  return scores;
}

// Scores of a single window given in original units.
template <class T>
std::vector<double> score_window(const net::Network<T>& model, std::span<const double> window, int n_pairs,
                                 std::uint64_t seed, double mask_ratio = 0.5) {
  ChannelView cv;
  cv.values.assign(window.begin(), window.end());
  const auto b = normalize(make_windows(cv, window.size(), window.size(), WindowMode::kTest));
  const RowMatrix s = score_windows(model, b, n_pairs, seed, 0, mask_ratio);
  return {s.data(), s.data() + s.cols()};
}

// Channels scored independently over non-overlapping windows; the series
// score is the channel mean. The padded tail is cropped to T.
template <class T>
ScoreSeries score_series(const TimeSeries& ts, const net::Network<T>& model, int n_pairs, std::uint64_t seed,
                         double mask_ratio = 0.5) {
  const auto w = static_cast<std::size_t>(model.config().window);
  const std::size_t len = ts.length();
  if (len < w) throw DataError("SeriesTooShort", ts.name + " is shorter than the model window");
  ScoreSeries out;
  out.per_channel_scores = RowMatrix::Zero(static_cast<Index>(len), static_cast<Index>(ts.channels()));
  for (const auto& cv : split_channels(ts)) {
    const auto batch = normalize(make_windows(cv, w, w, WindowMode::kTest));
    const std::uint64_t first_id = static_cast<std::uint64_t>(cv.channel_index) << 32;
    const RowMatrix s = score_windows(model, batch, n_pairs, seed, first_id, mask_ratio);
    for (Index k = 0; k < s.rows(); ++k) {
      const auto start = batch.origin[static_cast<std::size_t>(k)].start;
      for (std::size_t i = 0; i < w && start + i < len; ++i) {
        (*out.per_channel_scores)(static_cast<Index>(start + i), static_cast<Index>(cv.channel_index)) = s(k, static_cast<Index>(i));
      }
    }
  }
  out.scores.resize(len);
  for (std::size_t t = 0; t < len; ++t) out.scores[t] = out.per_channel_scores->row(static_cast<Index>(t)).mean();
  return out;
}

inline Labels decide(std::span<const double> scores, double threshold) {
  Labels d(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) d[i] = scores[i] > threshold ? 1 : 0;
  return d;
}

inline ScoreSeries detect(ScoreSeries ss, double threshold) {
  ss.threshold = threshold;
  ss.decisions = decide(ss.scores, threshold);
  return ss;
}

// Calibrates on `calibration` when given, else on the leading init_fraction
// of the stream, then applies the threshold.
inline ScoreSeries threshold_series(ScoreSeries ss, const spot::SpotConfig& cfg,
                                    std::optional<std::span<const double>> calibration = std::nullopt) {
  std::vector<double> init;
  if (calibration) {
    init.assign(calibration->begin(), calibration->end());
  } else {
    const auto n = static_cast<std::size_t>(std::ceil(cfg.init_fraction * static_cast<double>(ss.scores.size())));
    init.assign(ss.scores.begin(), ss.scores.begin() + static_cast<std::ptrdiff_t>(std::min(n, ss.scores.size())));
  }
  const auto res = spot::spot_threshold(init, cfg);
  ss.spot = res;
  return detect(std::move(ss), res.threshold);
}

}  // namespace dada::detect
