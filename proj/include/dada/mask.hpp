#pragma once

// Patching and complementary patch masks.
//
// A mask bit of 1 keeps the patch visible in the first branch (X_m = M * X);
// the second branch sees the complement. Every point is reconstructed by the
// branch in which its patch was hidden.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dada/dataset.hpp"
#include "dada/error.hpp"

namespace dada {

using Mask = std::vector<std::uint8_t>;

struct PatchSequence {
  RowMatrix patches;  // P x d
  std::size_t window_index = 0;

  std::size_t count() const { return static_cast<std::size_t>(patches.rows()); }
  std::size_t width() const { return static_cast<std::size_t>(patches.cols()); }
};

struct MaskPair {
  Mask mask;  // length P, 1 = visible in the first branch
  double ratio = 0.5;
  std::uint64_t seed = 0;

  Mask complement() const {
    Mask c(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) c[i] = static_cast<std::uint8_t>(1 - mask[i]);
    return c;
  }
};

inline PatchSequence patchify(std::span<const double> window, std::size_t d, std::size_t window_index = 0) {
  if (d == 0 || window.size() % d != 0) {
    throw ConfigError("IndivisibleWindow: window of " + std::to_string(window.size()) +
                      " points is not a multiple of patch size " + std::to_string(d));
  }
  PatchSequence p;
  p.window_index = window_index;
  p.patches = Eigen::Map<const RowMatrix>(window.data(), static_cast<Eigen::Index>(window.size() / d),
                                          static_cast<Eigen::Index>(d));
  return p;
}

inline std::vector<double> unpatchify(const PatchSequence& p) {
  return {p.patches.data(), p.patches.data() + p.patches.size()};
}

inline std::size_t mask_ones(std::size_t patches, double ratio) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(patches) + 0.5));
}

// round(ratio * P) ones at uniformly random positions.
template <class Rng>
Mask sample_mask(std::size_t patches, double ratio, Rng& rng) {
  const std::size_t ones = mask_ones(patches, ratio);
  std::vector<std::size_t> idx(patches);
  for (std::size_t i = 0; i < patches; ++i) idx[i] = i;
  Mask m(patches, 0);
  for (std::size_t k = 0; k < ones; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng() % (patches - k));
    std::swap(idx[k], idx[j]);
    m[idx[k]] = 1;
  }
  return m;
}

inline MaskPair make_complementary_masks(std::size_t patches, double ratio, std::uint64_t seed) {
  if (patches < 2) throw ConfigError("complementary masks need at least 2 patches");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0,1)");
  std::mt19937_64 rng(seed);
  return {sample_mask(patches, ratio, rng), ratio, seed};
}

inline PatchSequence apply_mask(const PatchSequence& x, const Mask& m) {
  if (m.size() != x.count()) throw ConfigError("mask length differs from patch count");
  PatchSequence out = x;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) out.patches.row(static_cast<Eigen::Index>(i)).setZero();
  }
  return out;
}

// (1 - M) * recon_from_visible + M * recon_from_complement, with each patch
// bit broadcast over its points.
inline std::vector<double> combine_reconstructions(const Mask& m, std::span<const double> recon_from_xm,
                                                   std::span<const double> recon_from_xbar) {
  if (recon_from_xm.size() != recon_from_xbar.size()) throw ConfigError("reconstruction length mismatch");
  const std::size_t w = recon_from_xm.size();
  if (m.empty() || w % m.size() != 0) throw ConfigError("reconstruction length not divisible by patch count");
  const std::size_t d = w / m.size();
  std::vector<double> out(w);
  for (std::size_t t = 0; t < w; ++t) {
    const double bit = m[t / d];
    out[t] = (1.0 - bit) * recon_from_xm[t] + bit * recon_from_xbar[t];
  }
  return out;
}

}  // namespace dada
