#pragma once

// Reconstruction losses, the adversarial train step and the pretraining /
// fine-tuning loops.
//
// One optimizer drives both players. The anomaly decoder's gradient reaches
// the feature extractor through a gradient reversal layer, so a plain descent
// step on L_n + L_a moves (theta_g, theta_n) down L_n - lambda * L_a and
// theta_a down L_a.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dada/checkpoint.hpp"
#include "dada/dataset.hpp"
#include "dada/error.hpp"
#include "dada/inject.hpp"
#include "dada/mask.hpp"
#include "dada/network.hpp"

namespace dada::train {

using net::Mat;
using net::Index;

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 128;
  int epochs = 5;
  double mask_ratio = 0.5;
  int mask_pairs_train = 1;
  double abnormal_fraction = 0.5;
  int train_stride = 100;
  // Draw fresh masks every step; otherwise each window keeps a mask derived
  // from its index.
  bool resample_masks = true;
  // Ablation: without it the anomaly branch maximizes L_a in every parameter
  // group (no reversal into the extractor, anomaly decoder ascends too).
  bool adversarial = true;
  // "constant" or "cosine" (decays from lr to lr * lr_floor over all epochs).
  std::string lr_schedule = "constant";
  double lr_floor = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("train: mask_ratio must lie in (0,1)");
    if (!(abnormal_fraction > 0.0 && abnormal_fraction < 1.0)) {
      throw ConfigError("train: abnormal_fraction must lie in (0,1)");
    }
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (mask_pairs_train < 1) throw ConfigError("train: mask_pairs_train must be >= 1");
    if (train_stride < 1) throw ConfigError("train: train_stride must be >= 1");
    if (lr_schedule != "constant" && lr_schedule != "cosine") {
      throw ConfigError("train: lr_schedule must be 'constant' or 'cosine'");
    }
    if (!(lr_floor >= 0.0 && lr_floor <= 1.0)) throw ConfigError("train: lr_floor must lie in [0,1]");
  }

  int abnormal_per_batch() const {
    const int a = static_cast<int>(std::lround(batch_size * abnormal_fraction));
    return std::clamp(a, 1, batch_size - 1);
  }
  int normal_per_batch() const { return batch_size - abnormal_per_batch(); }

  // progress in [0,1) over the whole run.
  double lr_at(double progress) const {
    if (lr_schedule == "constant") return lr;
    const double floor = lr * lr_floor;
    return floor + 0.5 * (lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"mask_ratio", c.mask_ratio},
          {"mask_pairs_train", c.mask_pairs_train},
          {"abnormal_fraction", c.abnormal_fraction},
          {"train_stride", c.train_stride},
          {"resample_masks", c.resample_masks},
          {"adversarial", c.adversarial},
          {"lr_schedule", c.lr_schedule},
          {"lr_floor", c.lr_floor},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  const auto known = to_json(c);
  try {
    for (const auto& [key, _] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown train key '" + key + "'");
    }
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
    c.mask_pairs_train = j.value("mask_pairs_train", c.mask_pairs_train);
    c.abnormal_fraction = j.value("abnormal_fraction", c.abnormal_fraction);
    c.train_stride = j.value("train_stride", c.train_stride);
    c.resample_masks = j.value("resample_masks", c.resample_masks);
    c.adversarial = j.value("adversarial", c.adversarial);
    c.lr_schedule = j.value("lr_schedule", c.lr_schedule);
    c.lr_floor = j.value("lr_floor", c.lr_floor);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("train config: ") + ex.what());
  }
  c.validate();
  return c;
}

struct LossReport {
  double loss_norm = 0.0;
  double loss_abnorm = 0.0;
  long step = 0;
};

// ---- losses (batch means of per-window squared norms) ----

template <class T>
double loss_normal(const Mat<T>& x, const Mat<T>& recon) {
  if (x.rows() != recon.rows() || x.cols() != recon.cols()) throw ConfigError("loss_normal: shape mismatch");
  if (x.rows() == 0) return 0.0;
  return static_cast<double>((x - recon).squaredNorm()) / static_cast<double>(x.rows());
}

// Error is counted only where labels are 1.
template <class T>
double loss_abnormal(const Mat<T>& x, const Mat<T>& recon, const Mat<T>& labels) {
  if (x.rows() != recon.rows() || x.cols() != recon.cols() || labels.rows() != x.rows() || labels.cols() != x.cols()) {
    throw ConfigError("loss_abnormal: shape mismatch");
  }
  if (x.rows() == 0) return 0.0;
  return static_cast<double>(((x - recon).array() * labels.array()).matrix().squaredNorm()) /
         static_cast<double>(x.rows());
}

// ---- optimizer ----

template <class T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const net::Params<T>& like, const TrainConfig& c)
      : m_(like.zeros_like()), v_(like.zeros_like()), beta1_(c.beta1), beta2_(c.beta2), eps_(c.adam_eps), wd_(c.weight_decay) {}

  void update(net::Params<T>& p, const net::Params<T>& g, double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    std::vector<Mat<T>*> pm, mm, vm;
    std::vector<const Mat<T>*> gm;
    p.for_each([&](const std::string&, net::Group, Mat<T>& t) { pm.push_back(&t); });
    g.for_each([&](const std::string&, net::Group, const Mat<T>& t) { gm.push_back(&t); });
    m_.for_each([&](const std::string&, net::Group, Mat<T>& t) { mm.push_back(&t); });
    v_.for_each([&](const std::string&, net::Group, Mat<T>& t) { vm.push_back(&t); });
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T step_size = static_cast<T>(lr / bc1);
    const T decay = static_cast<T>(1.0 - lr * wd_);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < pm.size(); ++i) {
      auto& m = *mm[i];
      auto& v = *vm[i];
      const auto& grad = *gm[i];
      m = b1 * m + (T(1) - b1) * grad;
      v = (b2 * v.array() + (T(1) - b2) * grad.array().square()).matrix();
      *pm[i] *= decay;
      pm[i]->array() -= step_size * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
    }
  }

  long steps() const { return step_; }
  net::Params<T>& first_moment() { return m_; }
  net::Params<T>& second_moment() { return v_; }
  const net::Params<T>& first_moment() const { return m_; }
  const net::Params<T>& second_moment() const { return v_; }
  void set_steps(long s) { step_ = s; }

 private:
  net::Params<T> m_, v_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8, wd_ = 1e-2;
  long step_ = 0;
};

// ---- train step ----

template <class T>
struct TrainBatch {
  Mat<T> normal;           // Nn x W (normalized)
  Mat<T> abnormal;         // Na x W (normalized)
  Mat<T> abnormal_labels;  // Na x W in {0,1}
  std::vector<std::uint64_t> normal_ids;
  std::vector<std::uint64_t> abnormal_ids;
};

// Output-gradient sign for the anomaly decoder and the multiplier applied
// to the gradient flowing from it into the feature extractor.
struct AbnormalScales {
  double output = 1.0;
  double reversal = -1.0;
};

inline AbnormalScales abnormal_scales(const net::NetConfig& nc, const TrainConfig& tc) {
  if (!tc.adversarial) return {-1.0, 1.0};
  return {1.0, -nc.grl_lambda};
}

namespace detail {

// Expands patch bits to a N x W {0,1} matrix.
template <class T>
Mat<T> broadcast_masks(const std::vector<Mask>& masks, int window, int patch) {
  Mat<T> out(static_cast<Index>(masks.size()), window);
  for (std::size_t n = 0; n < masks.size(); ++n) {
    for (int t = 0; t < window; ++t) out(static_cast<Index>(n), t) = static_cast<T>(masks[n][static_cast<std::size_t>(t / patch)]);
  }
  return out;
}

template <class T>
std::vector<Mask> draw_masks(Index n, const net::NetConfig& nc, const TrainConfig& tc, std::mt19937_64& rng,
                             const std::vector<std::uint64_t>& ids) {
  std::vector<Mask> masks;
  masks.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    if (tc.resample_masks || ids.size() != static_cast<std::size_t>(n)) {
      masks.push_back(sample_mask(static_cast<std::size_t>(nc.patches()), tc.mask_ratio, rng));
    } else {
      std::mt19937_64 r(tc.seed ^ (ids[static_cast<std::size_t>(i)] * 0x9E3779B97F4A7C15ULL + 1));
      masks.push_back(sample_mask(static_cast<std::size_t>(nc.patches()), tc.mask_ratio, r));
    }
  }
  return masks;
}

}  // namespace detail

// Complementary-branch reconstruction of a batch through one decoder,
// returning the pieces needed for backward.
template <class T>
struct BranchPass {
  Mat<T> vis;        // N x W broadcast mask (1 = visible in the first branch)
  Mat<T> recon;      // 2N x W: rows [0,N) from the visible branch, [N,2N) from the complement
  Mat<T> combined;   // N x W
};

template <class T>
Mat<T> stack_masked(const Mat<T>& x, const Mat<T>& vis) {
  Mat<T> s(2 * x.rows(), x.cols());
  s.topRows(x.rows()) = x.cwiseProduct(vis);
  s.bottomRows(x.rows()) = x.cwiseProduct((Mat<T>::Ones(vis.rows(), vis.cols()) - vis));
  return s;
}

template <class T>
Mat<T> combine(const Mat<T>& recon, const Mat<T>& vis) {
  const Index n = vis.rows();
  return (Mat<T>::Ones(n, vis.cols()) - vis).cwiseProduct(recon.topRows(n)) + vis.cwiseProduct(recon.bottomRows(n));
}

// Computes losses and accumulates gradients of one step into g (which is
// zeroed first). Losses and gradients are averaged over mask pairs.
template <class T>
LossReport compute_gradients(const net::Network<T>& model, const TrainBatch<T>& batch, const TrainConfig& tc,
                             std::mt19937_64& rng, net::Params<T>& g) {
  const auto& nc = model.config();
  const Index nn = batch.normal.rows();
  const Index na = batch.abnormal.rows();
  if (nn == 0 && na == 0) throw DataError("EmptyStream", "train step needs at least one window");
  const Index p = nc.patches();
  const auto scales = abnormal_scales(nc, tc);
  const auto dec_a = nc.dual_decoders ? net::Decoder::kAnomaly : net::Decoder::kNormal;
  g = model.params().zeros_like();
  net::Params<T> pair_grads = g;

  LossReport rep;
  const T inv_pairs = T(1) / static_cast<T>(tc.mask_pairs_train);
  for (int pair = 0; pair < tc.mask_pairs_train; ++pair) {
    const Mat<T> vis_n = detail::broadcast_masks<T>(detail::draw_masks<T>(nn, nc, tc, rng, batch.normal_ids), nc.window, nc.patch);
    const Mat<T> vis_a = detail::broadcast_masks<T>(detail::draw_masks<T>(na, nc, tc, rng, batch.abnormal_ids), nc.window, nc.patch);

    Mat<T> stacked(2 * (nn + na), nc.window);
    stacked.topRows(2 * nn) = stack_masked(batch.normal, vis_n);
    stacked.bottomRows(2 * na) = stack_masked(batch.abnormal, vis_a);

    net::FeatureCache<T> cache;
    const Mat<T> h = model.features(stacked, true, &rng, cache);
    const Mat<T> h_n = h.topRows(2 * nn * p);
    const Mat<T> h_a = h.bottomRows(2 * na * p);

    const Mat<T> rec_n = model.decode(net::Decoder::kNormal, h_n);
    const Mat<T> rec_a = model.decode(dec_a, net::GradientReversal{}.forward(h_a));
    const Mat<T> comb_n = combine(rec_n, vis_n);
    const Mat<T> comb_a = combine(rec_a, vis_a);

    const double ln = loss_normal(batch.normal, comb_n);
    const double la = loss_abnormal(batch.abnormal, comb_a, batch.abnormal_labels);
    rep.loss_norm += ln / tc.mask_pairs_train;
    rep.loss_abnorm += la / tc.mask_pairs_train;

    // dL/dcombined, split back onto the branch that produced each point.
    const Mat<T> d_comb_n = (comb_n - batch.normal) * static_cast<T>(nn > 0 ? 2.0 / static_cast<double>(nn) : 0.0);
    const Mat<T> d_comb_a = (comb_a - batch.abnormal).cwiseProduct(batch.abnormal_labels) *
                            static_cast<T>(na > 0 ? scales.output * 2.0 / static_cast<double>(na) : 0.0);
    auto split = [](const Mat<T>& d, const Mat<T>& vis) {
      Mat<T> out(2 * d.rows(), d.cols());
      out.topRows(d.rows()) = d.cwiseProduct(Mat<T>::Ones(vis.rows(), vis.cols()) - vis);
      out.bottomRows(d.rows()) = d.cwiseProduct(vis);
      return out;
    };

    pair_grads = model.params().zeros_like();
    Mat<T> d_h(h.rows(), h.cols());
    d_h.topRows(2 * nn * p) = model.decode_backward(net::Decoder::kNormal, h_n, split(d_comb_n, vis_n), pair_grads);
    const Mat<T> d_h_a = model.decode_backward(dec_a, h_a, split(d_comb_a, vis_a), pair_grads);
    d_h.bottomRows(2 * na * p) = d_h_a * static_cast<T>(scales.reversal);
    model.features_backward(cache, d_h, pair_grads);

    std::vector<Mat<T>*> dst, src;
    g.for_each([&](const std::string&, net::Group, Mat<T>& m) { dst.push_back(&m); });
    pair_grads.for_each([&](const std::string&, net::Group, Mat<T>& m) { src.push_back(&m); });
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] += inv_pairs * *src[i];
  }
  return rep;
}

template <class T>
LossReport train_step(net::Network<T>& model, AdamW<T>& opt, const TrainBatch<T>& batch, const TrainConfig& tc,
                      std::mt19937_64& rng, double lr) {
  net::Params<T> g;
  LossReport rep = compute_gradients(model, batch, tc, rng, g);
  if (!std::isfinite(rep.loss_norm) || !std::isfinite(rep.loss_abnorm)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << opt.steps() << ": loss_norm=" << rep.loss_norm
        << " loss_abnorm=" << rep.loss_abnorm;
    throw TrainingError("NonFiniteLoss", msg.str());
  }
  opt.update(model.params(), g, lr);
  rep.step = opt.steps();
  return rep;
}

// ---- data streams ----

struct TrainData {
  RowMatrix normal;
  RowMatrix abnormal;
  RowMatrix abnormal_labels;
};

// Keeps only abnormal windows with at least one labelled point.
inline void append_abnormal(TrainData& d, const WindowBatch& b) {
  std::vector<Index> keep;
  for (Index r = 0; r < b.windows.rows(); ++r) {
    if (b.labels && b.labels->row(r).template cast<int>().sum() > 0) keep.push_back(r);
  }
  const Index old = d.abnormal.rows();
  d.abnormal.conservativeResize(old + static_cast<Index>(keep.size()), b.windows.cols());
  d.abnormal_labels.conservativeResize(old + static_cast<Index>(keep.size()), b.windows.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    d.abnormal.row(old + static_cast<Index>(k)) = b.windows.row(keep[k]);
    d.abnormal_labels.row(old + static_cast<Index>(k)) = b.labels->row(keep[k]).template cast<double>();
  }
}

inline void append_normal(TrainData& d, const WindowBatch& b) {
  const Index old = d.normal.rows();
  d.normal.conservativeResize(old + b.windows.rows(), b.windows.cols());
  d.normal.bottomRows(b.windows.rows()) = b.windows;
}

inline TrainData load_train_data(const DatasetManifest& m, int window, int stride) {
  TrainData d;
  d.normal.resize(0, window);
  d.abnormal.resize(0, window);
  d.abnormal_labels.resize(0, window);
  for (const auto& e : m.entries) {
    if (e.role == Role::kTest) continue;
    const auto ts = load(e);
    for (const auto& cv : split_channels(ts)) {
      if (cv.values.size() < static_cast<std::size_t>(window)) continue;
      const auto b = normalize(make_windows(cv, static_cast<std::size_t>(window), static_cast<std::size_t>(stride)));
      if (e.role == Role::kNormal) {
        append_normal(d, b);
      } else {
        if (!b.labels) throw DataError("MalformedFile", e.path + " is abnormal but has no label column");
        append_abnormal(d, b);
      }
    }
  }
  if (d.normal.rows() == 0) throw DataError("EmptyStream", "no normal training windows");
  if (d.abnormal.rows() == 0) throw DataError("EmptyStream", "no labelled abnormal training windows");
  return d;
}

// Normal windows from the target's normal entries plus an abnormal stream
// made by injecting anomalies into those same series.
inline TrainData finetune_data(const DatasetManifest& m, int window, int stride, const inject::InjectionSpec& spec) {
  TrainData d;
  d.normal.resize(0, window);
  d.abnormal.resize(0, window);
  d.abnormal_labels.resize(0, window);
  std::uint64_t k = 0;
  for (const auto& e : m.entries) {
    if (e.role != Role::kNormal) continue;
    const auto ts = load(e);
    inject::InjectionSpec s = spec;
    s.seed = spec.seed + 1000003ULL * k++;
    auto [corrupted, _] = inject::inject_series(ts, s);
    for (const auto& cv : split_channels(ts)) {
      append_normal(d, normalize(make_windows(cv, static_cast<std::size_t>(window), static_cast<std::size_t>(stride))));
    }
    for (const auto& cv : split_channels(corrupted)) {
      append_abnormal(d, normalize(make_windows(cv, static_cast<std::size_t>(window), static_cast<std::size_t>(stride))));
    }
  }
  if (d.normal.rows() == 0) throw DataError("EmptyStream", "no normal windows in the target manifest");
  if (d.abnormal.rows() == 0) throw DataError("EmptyStream", "injection produced no abnormal windows");
  return d;
}

// ---- loop ----

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double loss_norm = 0.0;
  double loss_abnorm = 0.0;
  double lr = 0.0;
  double wallclock = 0.0;
};

inline nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step}, {"epoch", r.epoch}, {"loss_norm", r.loss_norm}, {"loss_abnorm", r.loss_abnorm},
          {"lr", r.lr}, {"wallclock", r.wallclock}};
}

struct EpochSummary {
  int epoch = 0;
  double loss_norm = 0.0;
  double loss_abnorm = 0.0;
};

// Everything needed to continue training bit-identically.
template <class T>
struct Trainer {
  net::Network<T> model;
  AdamW<T> opt;
  TrainConfig config;
  std::mt19937_64 rng;
  int epoch = 0;  // next epoch to run
  std::vector<EpochSummary> history;

  Trainer(net::Network<T> m, TrainConfig tc)
      : model(std::move(m)), opt(model.params(), tc), config(std::move(tc)), rng(config.seed ^ 0xD1B54A32D192ED03ULL) {
    config.validate();
  }

  void run_epoch(const TrainData& data, const std::function<void(const StepRecord&)>& on_step = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const int nn = config.normal_per_batch();
    const int na = config.abnormal_per_batch();
    const std::uint64_t epoch_seed = config.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + 1;
    const auto order_n = seeded_order(static_cast<std::size_t>(data.normal.rows()), epoch_seed);
    const auto order_a = seeded_order(static_cast<std::size_t>(data.abnormal.rows()), ~epoch_seed);
    const std::size_t steps = (order_n.size() + static_cast<std::size_t>(nn) - 1) / static_cast<std::size_t>(nn);
    std::size_t cursor_a = 0;
    EpochSummary sum{epoch, 0.0, 0.0};
    for (std::size_t s = 0; s < steps; ++s) {
      TrainBatch<T> b;
      const std::size_t lo = s * static_cast<std::size_t>(nn);
      const std::size_t hi = std::min(order_n.size(), lo + static_cast<std::size_t>(nn));
      b.normal.resize(static_cast<Index>(hi - lo), data.normal.cols());
      for (std::size_t i = lo; i < hi; ++i) {
        b.normal.row(static_cast<Index>(i - lo)) = data.normal.row(static_cast<Index>(order_n[i])).template cast<T>();
        b.normal_ids.push_back(order_n[i]);
      }
      b.abnormal.resize(na, data.abnormal.cols());
      b.abnormal_labels.resize(na, data.abnormal.cols());
      for (int i = 0; i < na; ++i) {
        const auto src = static_cast<Index>(order_a[cursor_a++ % order_a.size()]);
        b.abnormal.row(i) = data.abnormal.row(src).template cast<T>();
        b.abnormal_labels.row(i) = data.abnormal_labels.row(src).template cast<T>();
        b.abnormal_ids.push_back(static_cast<std::uint64_t>(src));
      }
      const double progress = (static_cast<double>(epoch) + static_cast<double>(s) / static_cast<double>(steps)) /
                              std::max(1, config.epochs);
      const double lr = config.lr_at(std::min(progress, 1.0));
      const auto rep = train_step(model, opt, b, config, rng, lr);
      sum.loss_norm += rep.loss_norm;
      sum.loss_abnorm += rep.loss_abnorm;
      if (on_step) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        on_step({rep.step, epoch, rep.loss_norm, rep.loss_abnorm, lr, secs});
      }
    }
    sum.loss_norm /= static_cast<double>(steps);
    sum.loss_abnorm /= static_cast<double>(steps);
    history.push_back(sum);
    ++epoch;
  }

  void run(const TrainData& data, int epochs, const std::function<void(const StepRecord&)>& on_step = {}) {
    for (int e = 0; e < epochs; ++e) run_epoch(data, on_step);
  }

  Archive archive() const {
    Archive a = make_checkpoint(model);
    put_params(a, opt.first_moment(), "opt.m.");
    put_params(a, opt.second_moment(), "opt.v.");
    std::ostringstream rs;
    rs << rng;
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& h : history) hist.push_back({{"epoch", h.epoch}, {"loss_norm", h.loss_norm}, {"loss_abnorm", h.loss_abnorm}});
    a.meta["trainer"] = {{"train", to_json(config)}, {"epoch", epoch}, {"opt_steps", opt.steps()},
                         {"rng", rs.str()}, {"history", hist}};
    return a;
  }

  // Restores a trainer; without saved optimizer state (a plain model
  // checkpoint) the optimizer and RNG start fresh from tc.
  static Trainer from_archive(const Archive& a, const TrainConfig& tc) {
    Trainer t(network_from_archive<T>(a), tc);
    if (a.meta.contains("trainer") && a.contains("opt.m.embed.w")) {
      const auto& tr = a.meta.at("trainer");
      get_params(a, t.opt.first_moment(), "opt.m.");
      get_params(a, t.opt.second_moment(), "opt.v.");
      t.opt.set_steps(tr.at("opt_steps").get<long>());
      std::istringstream rs(tr.at("rng").get<std::string>());
      rs >> t.rng;
      t.epoch = tr.at("epoch").get<int>();
      for (const auto& h : tr.at("history")) {
        t.history.push_back({h.at("epoch").get<int>(), h.at("loss_norm").get<double>(), h.at("loss_abnorm").get<double>()});
      }
    }
    return t;
  }
};

template <class T>
Trainer<T> pretrain(const TrainData& data, const net::NetConfig& nc, const TrainConfig& tc,
                    const std::function<void(const StepRecord&)>& on_step = {}) {
  tc.validate();
  Trainer<T> t(net::Network<T>(nc, tc.seed), tc);
  t.run(data, tc.epochs, on_step);
  return t;
}

template <class T>
Trainer<T> pretrain(const DatasetManifest& m, const net::NetConfig& nc, const TrainConfig& tc,
                    const std::function<void(const StepRecord&)>& on_step = {}) {
  return pretrain<T>(load_train_data(m, nc.window, tc.train_stride), nc, tc, on_step);
}

// Continues from a model checkpoint with a fresh optimizer on the target data.
template <class T>
Trainer<T> finetune(const Archive& checkpoint, const TrainData& data, const TrainConfig& tc,
                    const std::function<void(const StepRecord&)>& on_step = {}) {
  tc.validate();
  Trainer<T> t(network_from_archive<T>(checkpoint), tc);
  t.run(data, tc.epochs, on_step);
  return t;
}

}  // namespace dada::train
