#pragma once

// The reconstruction network: patch embedding, residual dilated-convolution
// encoder, bottleneck pool with a noisy top-k router, and two per-patch
// decoders. Forward and backward passes are written out by hand and operate
// on batches of windows stacked row-wise, one row per patch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <unsupported/Eigen/SpecialFunctions>

#include "dada/error.hpp"

namespace dada::net {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// Parameter ownership for the two-player objective: the feature extractor G
// (embedding, encoder, pool, router) and the two decoders.
enum class Group { kFeature, kNormalDecoder, kAnomalyDecoder };

enum class Decoder { kNormal, kAnomaly };

struct NetConfig {
  int window = 100;
  int patch = 5;
  int d_model = 64;
  int encoder_layers = 10;
  int kernel = 3;
  int d_r = 128;
  std::vector<int> pool_sizes{4, 8, 16, 32, 48, 64};
  int k = 3;
  double grl_lambda = 1.0;
  // Ablation switches. Without adaptive routing a single bottleneck of
  // fixed_bottleneck width (0: the largest pool size) replaces the pool.
  bool adaptive = true;
  int fixed_bottleneck = 0;
  bool dual_decoders = true;

  int patches() const { return window / patch; }
  int pool_count() const { return adaptive ? static_cast<int>(pool_sizes.size()) : 1; }
  int active_k() const { return adaptive ? std::min(k, pool_count()) : 1; }

  int bottleneck_width(int i) const {
    if (adaptive) return pool_sizes.at(static_cast<std::size_t>(i));
    return fixed_bottleneck > 0 ? fixed_bottleneck : *std::max_element(pool_sizes.begin(), pool_sizes.end());
  }

  // Dilation cycles through 1, 2, 4, ... up to the first power of two that
  // covers the patch sequence.
  int dilation(int layer) const {
    int cycle = 0;
    while ((1 << cycle) < patches()) ++cycle;
    if (cycle == 0) return 1;
    return 1 << (layer % cycle);
  }

  int receptive_field() const {
    int rf = 1;
    for (int l = 0; l < encoder_layers; ++l) rf += (kernel - 1) * dilation(l);
    return rf;
  }

  void validate() const {
    if (patch <= 0 || window <= 0 || window % patch != 0) {
      throw ConfigError("IndivisibleWindow: window " + std::to_string(window) + " is not a multiple of patch " +
                        std::to_string(patch));
    }
    if (d_model <= 0 || d_r <= 0 || encoder_layers < 1) throw ConfigError("net: widths and depth must be positive");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("net: kernel must be odd");
    if (pool_sizes.empty()) throw ConfigError("net: empty bottleneck pool");
    if (k < 1 || k > static_cast<int>(pool_sizes.size())) throw ConfigError("net: k must be in [1, pool size]");
    for (int s : pool_sizes) {
      if (s <= 0 || s >= d_r) throw ConfigError("net: bottleneck widths must lie in (0, d_r)");
    }
    if (!adaptive && (bottleneck_width(0) <= 0 || bottleneck_width(0) > d_r)) {
      throw ConfigError("net: fixed bottleneck width must lie in (0, d_r]");
    }
    if (grl_lambda < 0.0) throw ConfigError("net: grl_lambda must be >= 0");
  }

  // Widths used at full pretraining scale; d_r is chosen so every pool width
  // stays strictly below it.
  static NetConfig full_scale() {
    NetConfig c;
    c.d_model = 128;
    c.d_r = 512;
    c.pool_sizes = {16, 32, 64, 128, 192, 256};
    return c;
  }
};

inline nlohmann::json to_json(const NetConfig& c) {
  return {{"window", c.window},         {"patch", c.patch},
          {"d_model", c.d_model},       {"encoder_layers", c.encoder_layers},
          {"kernel", c.kernel},         {"d_r", c.d_r},
          {"pool_sizes", c.pool_sizes}, {"k", c.k},
          {"grl_lambda", c.grl_lambda}, {"adaptive", c.adaptive},
          {"fixed_bottleneck", c.fixed_bottleneck}, {"dual_decoders", c.dual_decoders}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j, NetConfig c = {}) {
  static const std::vector<std::string> known = {"window", "patch", "d_model", "encoder_layers", "kernel", "d_r",
                                                 "pool_sizes", "k", "grl_lambda", "adaptive", "fixed_bottleneck",
                                                 "dual_decoders"};
  try {
    for (const auto& [key, _] : j.items()) {
      if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown net key '" + key + "'");
    }
    c.window = j.value("window", c.window);
    c.patch = j.value("patch", c.patch);
    c.d_model = j.value("d_model", c.d_model);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.kernel = j.value("kernel", c.kernel);
    c.d_r = j.value("d_r", c.d_r);
    c.pool_sizes = j.value("pool_sizes", c.pool_sizes);
    c.k = j.value("k", c.k);
    c.grl_lambda = j.value("grl_lambda", c.grl_lambda);
    c.adaptive = j.value("adaptive", c.adaptive);
    c.fixed_bottleneck = j.value("fixed_bottleneck", c.fixed_bottleneck);
    c.dual_decoders = j.value("dual_decoders", c.dual_decoders);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("net config: ") + ex.what());
  }
  c.validate();
  return c;
}

// Affine map y = x w + b applied row-wise.
template <class T>
struct Affine {
  Mat<T> w;  // in x out
  Mat<T> b;  // 1 x out

  Mat<T> operator()(const Mat<T>& x) const {
    Mat<T> y = x * w;
    y.rowwise() += b.row(0);
    return y;
  }
};

template <class T>
struct Params {
  Affine<T> embed;
  std::vector<Affine<T>> conv;  // (kernel*d_model) x d_model per layer
  Affine<T> proj;               // d_model -> d_r
  std::vector<Affine<T>> down;  // d_r -> d_i
  std::vector<Affine<T>> up;    // d_i -> d_r
  Mat<T> router_w;              // d_r x B; empty without adaptive routing
  Mat<T> router_noise;
  Affine<T> dec_n;  // d_r -> patch
  Affine<T> dec_a;  // empty without dual decoders

  // Calls f(name, group, tensor) for every parameter tensor in a fixed order.
  template <class Self, class F>
  static void visit(Self& p, F&& f) {
    auto affine = [&](const std::string& name, Group g, auto& a) {
      f(name + ".w", g, a.w);
      f(name + ".b", g, a.b);
    };
    affine("embed", Group::kFeature, p.embed);
    for (std::size_t l = 0; l < p.conv.size(); ++l) affine("encoder.L" + std::to_string(l), Group::kFeature, p.conv[l]);
    affine("encoder.out", Group::kFeature, p.proj);
    for (std::size_t i = 0; i < p.down.size(); ++i) {
      affine("pool." + std::to_string(i) + ".down", Group::kFeature, p.down[i]);
      affine("pool." + std::to_string(i) + ".up", Group::kFeature, p.up[i]);
    }
    if (p.router_w.size() > 0) {
      f(std::string("router.w"), Group::kFeature, p.router_w);
      f(std::string("router.w_noise"), Group::kFeature, p.router_noise);
    }
    affine("dec_n", Group::kNormalDecoder, p.dec_n);
    if (p.dec_a.w.size() > 0) affine("dec_a", Group::kAnomalyDecoder, p.dec_a);
  }
  template <class F>
  void for_each(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  Params zeros_like() const {
    Params z = *this;
    z.for_each([](const std::string&, Group, Mat<T>& m) { m.setZero(); });
    return z;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, Group, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  template <class U>
  Params<U> cast() const {
    Params<U> out;
    auto conv_affine = [](const Affine<T>& a) { return Affine<U>{a.w.template cast<U>(), a.b.template cast<U>()}; };
    out.embed = conv_affine(embed);
    for (const auto& c : conv) out.conv.push_back(conv_affine(c));
    out.proj = conv_affine(proj);
    for (const auto& d : down) out.down.push_back(conv_affine(d));
    for (const auto& u : up) out.up.push_back(conv_affine(u));
    out.router_w = router_w.template cast<U>();
    out.router_noise = router_noise.template cast<U>();
    out.dec_n = conv_affine(dec_n);
    out.dec_a = conv_affine(dec_a);
    return out;
  }
};

// ---- elementwise helpers ----

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return cdf + x * pdf;
}

template <class T>
T softplus(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
Mat<T> apply_gelu(const Mat<T>& x) {
  const auto a = x.array();
  return (T(0.5) * a * (T(1) + (a * T(M_SQRT1_2)).erf())).matrix();
}

template <class T>
Mat<T> apply_gelu_grad(const Mat<T>& x) {
  const auto a = x.array();
  return (T(0.5) * (T(1) + (a * T(M_SQRT1_2)).erf()) + a * (T(-0.5) * a.square()).exp() * T(0.3989422804014327))
      .matrix();
}

// Row-wise standardization without learnable gain or shift.
template <class T>
struct RowNorm {
  static constexpr double kEps = 1e-5;

  // Returns y and stores 1/std per row.
  static Mat<T> forward(const Mat<T>& x, Mat<T>& inv_std) {
    const auto d = static_cast<T>(x.cols());
    Mat<T> y = x;
    inv_std.resize(x.rows(), 1);
    for (Index r = 0; r < x.rows(); ++r) {
      const T mean = x.row(r).sum() / d;
      y.row(r).array() -= mean;
      const T var = y.row(r).squaredNorm() / d;
      inv_std(r, 0) = T(1) / std::sqrt(var + static_cast<T>(kEps));
      y.row(r) *= inv_std(r, 0);
    }
    return y;
  }

  static Mat<T> backward(const Mat<T>& y, const Mat<T>& inv_std, const Mat<T>& dy) {
    const auto d = static_cast<T>(y.cols());
    Mat<T> dx(dy.rows(), dy.cols());
    for (Index r = 0; r < dy.rows(); ++r) {
      const T mean_dy = dy.row(r).sum() / d;
      const T mean_dyy = dy.row(r).dot(y.row(r)) / d;
      dx.row(r) = inv_std(r, 0) * (dy.row(r).array() - mean_dy - y.row(r).array() * mean_dyy).matrix();
    }
    return dx;
  }
};

// Gradient reversal: identity forward, -lambda times the incoming gradient
// backward.
struct GradientReversal {
  double lambda = 1.0;

  template <class M>
  const M& forward(const M& h) const {
    return h;
  }
  template <class M>
  M backward(const M& grad) const {
    return grad * static_cast<typename M::Scalar>(-lambda);
  }
};

// Per-window routing decision.
template <class T>
struct Routing {
  Mat<T> logits;   // N x B
  Mat<T> weights;  // N x B, zero outside the selected set
  std::vector<std::vector<int>> selected;
};

// Softmax over the top-k logits of each row; ties resolve to lower indices.
template <class T>
Routing<T> top_k_softmax(const Mat<T>& logits, int k) {
  Routing<T> r;
  r.logits = logits;
  r.weights = Mat<T>::Zero(logits.rows(), logits.cols());
  const int b = static_cast<int>(logits.cols());
  k = std::min(k, b);
  r.selected.resize(static_cast<std::size_t>(logits.rows()));
  std::vector<int> order(static_cast<std::size_t>(b));
  for (Index n = 0; n < logits.rows(); ++n) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int c) { return logits(n, a) > logits(n, c); });
    auto& sel = r.selected[static_cast<std::size_t>(n)];
    sel.assign(order.begin(), order.begin() + k);
    T mx = logits(n, sel.front());
    T z = 0;
    for (int i : sel) z += std::exp(logits(n, i) - mx);
    for (int i : sel) r.weights(n, i) = std::exp(logits(n, i) - mx) / z;
  }
  return r;
}

// Intermediate values of one feature-extractor pass, kept for backward.
template <class T>
struct FeatureCache {
  Index windows = 0;
  Mat<T> input;                 // (N*P) x patch
  std::vector<Mat<T>> hidden;   // residual stream before each layer, plus output
  std::vector<Mat<T>> taps;     // gathered conv inputs (N*P) x (kernel*d_model)
  Mat<T> z;                     // (N*P) x d_r
  Mat<T> pooled;                // N x d_r
  Mat<T> noise_pre;             // N x B
  Mat<T> eps;                   // N x B (zero at inference)
  Routing<T> routing;
  std::vector<std::vector<Index>> members;  // windows routed through each bottleneck
  std::vector<Mat<T>> down_pre;             // per bottleneck, rows of member windows
  std::vector<Mat<T>> up_out;
  Mat<T> h;                                 // (N*P) x d_r, row-normalized mixture
  Mat<T> h_inv_std;
};

template <class T>
class Network {
 public:
  Network() = default;

  Network(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int dm = cfg_.d_model;
    auto affine = [&](int in, int out, int fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      Affine<T> a{Mat<T>(in, out), Mat<T>(1, out)};
      for (Index i = 0; i < a.w.size(); ++i) a.w.data()[i] = static_cast<T>(u(rng));
      for (Index i = 0; i < a.b.size(); ++i) a.b.data()[i] = static_cast<T>(u(rng));
      return a;
    };
    p_.embed = affine(cfg_.patch, dm, cfg_.patch);
    for (int l = 0; l < cfg_.encoder_layers; ++l) p_.conv.push_back(affine(cfg_.kernel * dm, dm, cfg_.kernel * dm));
    p_.proj = affine(dm, cfg_.d_r, dm);
    for (int i = 0; i < cfg_.pool_count(); ++i) {
      const int di = cfg_.bottleneck_width(i);
      p_.down.push_back(affine(cfg_.d_r, di, cfg_.d_r));
      p_.up.push_back(affine(di, cfg_.d_r, di));
    }
    if (cfg_.adaptive) {
      // Zero-initialised gates start every bottleneck with equal odds.
      p_.router_w = Mat<T>::Zero(cfg_.d_r, cfg_.pool_count());
      p_.router_noise = Mat<T>::Zero(cfg_.d_r, cfg_.pool_count());
    }
    p_.dec_n = affine(cfg_.d_r, cfg_.patch, cfg_.d_r);
    if (cfg_.dual_decoders) p_.dec_a = affine(cfg_.d_r, cfg_.patch, cfg_.d_r);
  }

  Network(NetConfig cfg, Params<T> params) : cfg_(std::move(cfg)), p_(std::move(params)) { cfg_.validate(); }

  const NetConfig& config() const { return cfg_; }
  Params<T>& params() { return p_; }
  const Params<T>& params() const { return p_; }

  // ---- building blocks ----

  // Rows are patches: (N*P) x patch -> (N*P) x d_model.
  Mat<T> embed_patches(const Mat<T>& patches) const { return p_.embed(patches); }

  // Residual dilated stack over the patch axis of each window, then a
  // projection to the representation width. Rows: (N*P) x d_model.
  Mat<T> encode(const Mat<T>& embedded, Index windows) const {
    FeatureCache<T> c;
    c.windows = windows;
    return encode_cached(embedded, c);
  }

  // BN_i(z) = up_i(gelu(down_i(z))) applied per row.
  Mat<T> bottleneck_apply(int i, const Mat<T>& z) const {
    if (i < 0 || i >= static_cast<int>(p_.down.size())) throw ConfigError("bottleneck index out of range");
    return p_.up[static_cast<std::size_t>(i)](apply_gelu(p_.down[static_cast<std::size_t>(i)](z)));
  }

  // R(z) = z W_router + eps * softplus(z W_noise); eps = 0 when eps is null.
  Mat<T> route(const Mat<T>& pooled, const Mat<T>* eps = nullptr) const {
    Mat<T> logits = pooled * p_.router_w;
    if (eps != nullptr) {
      const Mat<T> np = pooled * p_.router_noise;
      logits.array() += eps->array() * np.unaryExpr([](T v) { return softplus(v); }).array();
    }
    return logits;
  }

  // Mean over the patches of each window: (N*P) x d_r -> N x d_r.
  Mat<T> pool_patches(const Mat<T>& z, Index windows) const {
    const Index p = cfg_.patches();
    Mat<T> out(windows, z.cols());
    for (Index n = 0; n < windows; ++n) out.row(n) = z.middleRows(n * p, p).colwise().mean();
    return out;
  }

  // Full feature extractor on stacked windows (N x W, already masked).
  // With train set and an rng, router noise is drawn per window.
  Mat<T> features(const Mat<T>& windows, bool train, std::mt19937_64* rng, FeatureCache<T>& c) const {
    const Index n = windows.rows();
    const Index p = cfg_.patches();
    c = FeatureCache<T>{};
    c.windows = n;
    c.input = Eigen::Map<const Mat<T>>(windows.data(), n * p, cfg_.patch);
    Mat<T> z = encode_cached(embed_patches(c.input), c);
    c.z = z;

    const int pools = cfg_.pool_count();
    if (cfg_.adaptive) {
      c.pooled = pool_patches(c.z, n);
      c.eps = Mat<T>::Zero(n, pools);
      if (train && rng != nullptr) {
        std::normal_distribution<double> n01(0.0, 1.0);
        for (Index i = 0; i < c.eps.size(); ++i) c.eps.data()[i] = static_cast<T>(n01(*rng));
      }
      c.noise_pre = c.pooled * p_.router_noise;
      c.routing = top_k_softmax<T>(route(c.pooled, &c.eps), cfg_.active_k());
    } else {
      c.routing.logits = Mat<T>::Zero(n, 1);
      c.routing.weights = Mat<T>::Ones(n, 1);
      c.routing.selected.assign(static_cast<std::size_t>(n), std::vector<int>{0});
    }

    c.members.assign(static_cast<std::size_t>(pools), {});
    for (Index w = 0; w < n; ++w) {
      for (int i : c.routing.selected[static_cast<std::size_t>(w)]) c.members[static_cast<std::size_t>(i)].push_back(w);
    }
    c.down_pre.assign(static_cast<std::size_t>(pools), {});
    c.up_out.assign(static_cast<std::size_t>(pools), {});
    c.h = Mat<T>::Zero(n * p, cfg_.d_r);
    for (int i = 0; i < pools; ++i) {
      const auto& mem = c.members[static_cast<std::size_t>(i)];
      if (mem.empty()) continue;
      const Mat<T> zi = gather(c.z, mem);
      c.down_pre[static_cast<std::size_t>(i)] = p_.down[static_cast<std::size_t>(i)](zi);
      c.up_out[static_cast<std::size_t>(i)] =
          p_.up[static_cast<std::size_t>(i)](apply_gelu(c.down_pre[static_cast<std::size_t>(i)]));
      const auto& u = c.up_out[static_cast<std::size_t>(i)];
      for (std::size_t m = 0; m < mem.size(); ++m) {
        const T wgt = c.routing.weights(mem[m], i);
        c.h.middleRows(mem[m] * p, p) += wgt * u.middleRows(static_cast<Index>(m) * p, p);
      }
    }
    c.h = RowNorm<T>::forward(c.h, c.h_inv_std);
    return c.h;
  }

  // Per-patch affine head: (N*P) x d_r -> N x W.
  Mat<T> decode(Decoder which, const Mat<T>& h) const {
    const Mat<T> rows = decoder(which)(h);
    return Eigen::Map<const Mat<T>>(rows.data(), h.rows() / cfg_.patches(), cfg_.window);
  }

  Mat<T> decode_normal(const Mat<T>& h) const { return decode(Decoder::kNormal, h); }
  Mat<T> decode_abnormal(const Mat<T>& h) const { return decode(Decoder::kAnomaly, h); }

  // Inference reconstruction of masked windows through the normal decoder.
  Mat<T> reconstruct(const Mat<T>& masked_windows) const {
    FeatureCache<T> c;
    return decode_normal(features(masked_windows, false, nullptr, c));
  }

  // ---- backward ----

  // Accumulates decoder gradients; returns dL/dh.
  Mat<T> decode_backward(Decoder which, const Mat<T>& h, const Mat<T>& d_recon, Params<T>& g) const {
    const Mat<T> d_rows = Eigen::Map<const Mat<T>>(d_recon.data(), h.rows(), cfg_.patch);
    Affine<T>& gd = (which == Decoder::kAnomaly && cfg_.dual_decoders) ? g.dec_a : g.dec_n;
    gd.w.noalias() += h.transpose() * d_rows;
    gd.b += d_rows.colwise().sum();
    return d_rows * decoder(which).w.transpose();
  }

  // Accumulates feature-extractor gradients given dL/dh for every row.
  void features_backward(const FeatureCache<T>& c, const Mat<T>& d_h_out, Params<T>& g) const {
    const Mat<T> d_h = RowNorm<T>::backward(c.h, c.h_inv_std, d_h_out);
    const Index p = cfg_.patches();
    const Index n = c.windows;
    const int pools = cfg_.pool_count();
    Mat<T> dz = Mat<T>::Zero(n * p, cfg_.d_r);
    Mat<T> dweights = Mat<T>::Zero(n, pools);

    for (int i = 0; i < pools; ++i) {
      const auto& mem = c.members[static_cast<std::size_t>(i)];
      if (mem.empty()) continue;
      const auto si = static_cast<std::size_t>(i);
      const Mat<T>& u = c.up_out[si];
      Mat<T> du(u.rows(), u.cols());
      for (std::size_t m = 0; m < mem.size(); ++m) {
        const auto rows = d_h.middleRows(mem[m] * p, p);
        const auto urows = u.middleRows(static_cast<Index>(m) * p, p);
        dweights(mem[m], i) = (rows.array() * urows.array()).sum();
        du.middleRows(static_cast<Index>(m) * p, p) = c.routing.weights(mem[m], i) * rows;
      }
      const Mat<T> act = apply_gelu(c.down_pre[si]);
      g.up[si].w.noalias() += act.transpose() * du;
      g.up[si].b += du.colwise().sum();
      Mat<T> dpre = du * p_.up[si].w.transpose();
      dpre.array() *= apply_gelu_grad(c.down_pre[si]).array();
      const Mat<T> zi = gather(c.z, mem);
      g.down[si].w.noalias() += zi.transpose() * dpre;
      g.down[si].b += dpre.colwise().sum();
      const Mat<T> dzi = dpre * p_.down[si].w.transpose();
      for (std::size_t m = 0; m < mem.size(); ++m) dz.middleRows(mem[m] * p, p) += dzi.middleRows(static_cast<Index>(m) * p, p);
    }

    if (cfg_.adaptive) {
      // Softmax restricted to the selected set.
      Mat<T> dlogits = Mat<T>::Zero(n, pools);
      for (Index w = 0; w < n; ++w) {
        const auto& sel = c.routing.selected[static_cast<std::size_t>(w)];
        T dot = 0;
        for (int i : sel) dot += c.routing.weights(w, i) * dweights(w, i);
        for (int i : sel) dlogits(w, i) = c.routing.weights(w, i) * (dweights(w, i) - dot);
      }
      Mat<T> dnoise = dlogits.array() * c.eps.array() *
                      c.noise_pre.unaryExpr([](T v) { return sigmoid(v); }).array();
      g.router_w.noalias() += c.pooled.transpose() * dlogits;
      g.router_noise.noalias() += c.pooled.transpose() * dnoise;
      Mat<T> dpooled = dlogits * p_.router_w.transpose() + dnoise * p_.router_noise.transpose();
      dpooled /= static_cast<T>(p);
      for (Index w = 0; w < n; ++w) dz.middleRows(w * p, p).rowwise() += dpooled.row(w);
    }

    // Projection and residual stack.
    const Mat<T>& top = c.hidden.back();
    g.proj.w.noalias() += top.transpose() * dz;
    g.proj.b += dz.colwise().sum();
    Mat<T> dhid = dz * p_.proj.w.transpose();
    const int dm = cfg_.d_model;
    for (int l = cfg_.encoder_layers - 1; l >= 0; --l) {
      const auto sl = static_cast<std::size_t>(l);
      g.conv[sl].w.noalias() += c.taps[sl].transpose() * dhid;
      g.conv[sl].b += dhid.colwise().sum();
      const Mat<T> dtaps = dhid * p_.conv[sl].w.transpose();
      Mat<T> dact = Mat<T>::Zero(n * p, dm);
      scatter_taps(dtaps, cfg_.dilation(l), n, dact);
      dact.array() *= apply_gelu_grad(c.hidden[sl]).array();
      dhid += dact;
    }
    g.embed.w.noalias() += c.input.transpose() * dhid;
    g.embed.b += dhid.colwise().sum();
  }

 private:
  const Affine<T>& decoder(Decoder which) const {
    return (which == Decoder::kAnomaly && cfg_.dual_decoders) ? p_.dec_a : p_.dec_n;
  }

  Mat<T> gather(const Mat<T>& rows, const std::vector<Index>& windows) const {
    const Index p = cfg_.patches();
    Mat<T> out(static_cast<Index>(windows.size()) * p, rows.cols());
    for (std::size_t m = 0; m < windows.size(); ++m) out.middleRows(static_cast<Index>(m) * p, p) = rows.middleRows(windows[m] * p, p);
    return out;
  }

  // taps[(w,p), j*dm:(j+1)*dm] = act[(w, p + (j - half) * dilation)] or 0.
  void gather_taps(const Mat<T>& act, int dil, Index windows, Mat<T>& taps) const {
    const Index p = cfg_.patches();
    const int dm = cfg_.d_model;
    const int half = cfg_.kernel / 2;
    taps = Mat<T>::Zero(windows * p, static_cast<Index>(cfg_.kernel) * dm);
    for (Index w = 0; w < windows; ++w) {
      for (Index q = 0; q < p; ++q) {
        for (int j = 0; j < cfg_.kernel; ++j) {
          const Index src = q + static_cast<Index>(j - half) * dil;
          if (src < 0 || src >= p) continue;
          taps.block(w * p + q, static_cast<Index>(j) * dm, 1, dm) = act.row(w * p + src);
        }
      }
    }
  }

  void scatter_taps(const Mat<T>& dtaps, int dil, Index windows, Mat<T>& dact) const {
    const Index p = cfg_.patches();
    const int dm = cfg_.d_model;
    const int half = cfg_.kernel / 2;
    for (Index w = 0; w < windows; ++w) {
      for (Index q = 0; q < p; ++q) {
        for (int j = 0; j < cfg_.kernel; ++j) {
          const Index src = q + static_cast<Index>(j - half) * dil;
          if (src < 0 || src >= p) continue;
          dact.row(w * p + src) += dtaps.block(w * p + q, static_cast<Index>(j) * dm, 1, dm);
        }
      }
    }
  }

  Mat<T> encode_cached(const Mat<T>& embedded, FeatureCache<T>& c) const {
    c.hidden.clear();
    c.taps.clear();
    Mat<T> h = embedded;
    for (int l = 0; l < cfg_.encoder_layers; ++l) {
      c.hidden.push_back(h);
      Mat<T> taps;
      gather_taps(apply_gelu(h), cfg_.dilation(l), c.windows, taps);
      h += p_.conv[static_cast<std::size_t>(l)](taps);
      c.taps.push_back(std::move(taps));
    }
    c.hidden.push_back(h);
    return p_.proj(h);
  }

  NetConfig cfg_;
  Params<T> p_;
};

}  // namespace dada::net
