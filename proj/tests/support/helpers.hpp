#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cbnet/composite.hpp"

namespace cbnet::helpers {

// Perturbs every stored tensor, BN gamma and running statistics included, so
// comparisons do not lean on default initial values.
inline void randomize(CBNet& net, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-0.3, 0.3);
  for (TensorView& v : net.unique_tensors()) {
    const bool var = v.name.ends_with("running_var");
    const bool gamma = v.name.ends_with("gamma");
    for (double& x : v.value) x = var ? 0.5 + std::abs(dist(rng)) : gamma ? 1.0 + dist(rng) : x + dist(rng);
  }
}

// Makes every composite term exactly zero: learned connections get zero conv
// weights and betas; for SLC, which adds assistant outputs directly, the
// assistant's weights and betas are zeroed instead.
inline void zero_composites(CBNet& net) {
  for (auto& [key, g] : net.connections()) {
    std::fill(g.conv.weight.data().begin(), g.conv.weight.data().end(), 0.0);
    std::fill(g.bn.beta.value.begin(), g.bn.beta.value.end(), 0.0);
  }
  if (net.config().style != CompositeStyle::SLC) return;
  for (std::size_t k = 1; k < net.backbone_count(); ++k) {
    for (TensorView& v : backbone_tensors(*net.backbone(k).params)) {
      if (v.name.ends_with(".weight") || v.name.ends_with(".beta")) std::fill(v.value.begin(), v.value.end(), 0.0);
    }
  }
}

// Stage outputs x^2..x^L of a single backbone, the layout of a pyramid.
inline std::vector<Tensor4> pyramid_levels(const Backbone& backbone, const Tensor4& image) {
  StageOutputs out = backbone_forward(backbone, image);
  return {out.begin() + 1, out.end()};
}

inline bool bit_identical(const std::vector<Tensor4>& a, const std::vector<Tensor4>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i].shape() == b[i].shape()) || a[i].values() != b[i].values()) return false;
  }
  return true;
}

inline double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace cbnet::helpers
