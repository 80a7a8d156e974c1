#pragma once

// A tiny double-precision network and the finite-difference gradient checks
// shared by the unit tests and the acceptance runner.

#include <cmath>
#include <random>
#include <vector>

#include "dada/network.hpp"
#include "dada/train.hpp"
#include "oracles.hpp"

namespace toy {

using dada::net::Mat;

inline dada::net::NetConfig config(double lambda = 1.0) {
  dada::net::NetConfig c;
  c.window = 8;
  c.patch = 2;
  c.d_model = 2;
  c.encoder_layers = 1;
  c.kernel = 3;
  c.d_r = 3;
  c.pool_sizes = {1, 2};
  c.k = 2;
  c.grl_lambda = lambda;
  return c;
}

// Random weights everywhere, including the zero-initialized router.
inline dada::net::Network<double> network(const dada::net::NetConfig& c, std::uint64_t seed) {
  dada::net::Network<double> m(c, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto* r : {&m.params().router_w, &m.params().router_noise}) {
    for (Eigen::Index i = 0; i < r->size(); ++i) r->data()[i] = n(rng);
  }
  return m;
}

inline dada::train::TrainBatch<double> batch(const dada::net::NetConfig& c, int normal, int abnormal,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  dada::train::TrainBatch<double> b;
  b.normal.resize(normal, c.window);
  b.abnormal.resize(abnormal, c.window);
  b.abnormal_labels.resize(abnormal, c.window);
  for (Eigen::Index i = 0; i < b.normal.size(); ++i) b.normal.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < b.abnormal.size(); ++i) {
    b.abnormal.data()[i] = n(rng);
    b.abnormal_labels.data()[i] = coin(rng) ? 1.0 : 0.0;
  }
  for (int i = 0; i < normal; ++i) b.normal_ids.push_back(static_cast<std::uint64_t>(i));
  for (int i = 0; i < abnormal; ++i) b.abnormal_ids.push_back(static_cast<std::uint64_t>(100 + i));
  return b;
}

inline dada::train::TrainConfig train_config(bool adversarial = true) {
  dada::train::TrainConfig tc;
  tc.resample_masks = false;
  tc.adversarial = adversarial;
  tc.seed = 3;
  return tc;
}

struct Coordinate {
  dada::net::Group group;
  Mat<double>* tensor;
  Eigen::Index index;
};

inline std::vector<Coordinate> coordinates(dada::net::Params<double>& p) {
  std::vector<Coordinate> out;
  p.for_each([&](const std::string&, dada::net::Group g, Mat<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back({g, &m, i});
  });
  return out;
}

// Instrumented gradient next to the finite-difference derivative of one
// of the two losses, for a single coordinate.
struct GradPair {
  double instrumented = 0.0;
  double finite_difference = 0.0;
};

// Gradient of the step with respect to coordinate `which` and the central
// difference of loss_abnorm (abnormal = true) or loss_norm at that
// coordinate. Router noise is replayed from the same RNG state.
inline GradPair gradient_pair(dada::net::Network<double>& model, const dada::train::TrainBatch<double>& b,
                              const dada::train::TrainConfig& tc, std::size_t which, bool abnormal,
                              std::uint64_t noise_seed, double h = 1e-6) {
  const std::mt19937_64 rng0(noise_seed);
  dada::net::Params<double> g;
  auto rng = rng0;
  dada::train::compute_gradients(model, b, tc, rng, g);
  auto gc = coordinates(g);
  auto pc = coordinates(model.params());
  const auto loss = [&] {
    dada::net::Params<double> scratch;
    auto r = rng0;
    const auto rep = dada::train::compute_gradients(model, b, tc, r, scratch);
    return abnormal ? rep.loss_abnorm : rep.loss_norm;
  };
  GradPair out;
  out.instrumented = gc[which].tensor->data()[gc[which].index];
  out.finite_difference = oracle::central_difference(loss, &pc[which].tensor->data()[pc[which].index], h);
  return out;
}

}  // namespace toy
