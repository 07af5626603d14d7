#pragma once

// Test-only reference implementations. Nothing here goes through the CBNet
// plan, stage_forward or the profiler: each oracle recomputes its quantity
// from the primitives or from closed-form arithmetic.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "cbnet/composite.hpp"
#include "cbnet/ops.hpp"
#include "cbnet/task.hpp"

namespace cbnet::oracle {

inline Tensor4 random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor4 t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor4 conv_bn(const ConvBn& layer, const Tensor4& x) {
  return batchnorm(conv2d(x, layer.conv), layer.bn);
}

inline Tensor4 stage(const StageParams& s, const Tensor4& x) {
  const Tensor4 down = relu(conv_bn(s.down, x));
  const Tensor4 a = relu(conv_bn(s.conv_a, down));
  return relu(add(conv_bn(s.conv_b, a), down));
}

inline Tensor4 composite(const CompositeConnection& g, const Tensor4& source) {
  return upsample_nearest(batchnorm(conv2d(source, g.conv), g.bn), g.target_h, g.target_w);
}

// Straight-line evaluation of the four composite equations. x[k][l] holds
// x_k^l, with l = 0 the stem output.
inline std::vector<Tensor4> pyramid(const CBNet& net, const Tensor4& image) {
  const CBNetConfig& cfg = net.config();
  const std::size_t K = cfg.k;
  const std::size_t L = cfg.spec.stages;
  std::map<std::pair<std::size_t, std::size_t>, Tensor4> x;

  auto g = [&](std::size_t k, std::size_t l) -> const CompositeConnection& {
    return net.connections().at(ConnectionKey{k, l, std::nullopt});
  };
  auto has = [&](std::size_t k, std::size_t l) { return x.count({k, l}) > 0; };
  auto stage_input = [&](std::size_t k, std::size_t l, Tensor4 in) {
    if (k < 2 || l < 2 || (cfg.accelerated && l < 3)) return in;
    switch (cfg.style) {
      case CompositeStyle::AHLC:
        if (has(k - 1, l)) in = add(in, composite(g(k, l), x.at({k - 1, l})));
        break;
      case CompositeStyle::SLC:
        if (has(k - 1, l - 1)) in = add(in, x.at({k - 1, l - 1}));
        break;
      case CompositeStyle::ALLC:
        if (l < L && has(k - 1, l + 1)) in = add(in, composite(g(k, l), x.at({k - 1, l + 1})));
        break;
      case CompositeStyle::DHLC:
        for (std::size_t i = l; i <= L; ++i) {
          if (has(k - 1, i)) {
            in = add(in, composite(net.connections().at(ConnectionKey{k, l, i}), x.at({k - 1, i})));
          }
        }
        break;
    }
    return in;
  };

  if (!cfg.accelerated) {
    for (std::size_t k = 1; k <= K; ++k) {
      const BackboneParams& p = *net.backbone(k).params;
      x[{k, 0}] = relu(conv_bn(*p.stem, image));
      for (std::size_t l = 1; l <= L; ++l) x[{k, l}] = stage(p.stage(l), stage_input(k, l, x.at({k, l - 1})));
    }
  } else {
    const BackboneParams& lead = *net.backbone(2).params;
    const BackboneParams& assistant = *net.backbone(1).params;
    x[{2, 0}] = relu(conv_bn(*lead.stem, image));
    x[{2, 1}] = stage(lead.stage(1), x.at({2, 0}));
    x[{2, 2}] = stage(lead.stage(2), x.at({2, 1}));
    x[{1, 3}] = stage(assistant.stage(3), x.at({2, 2}));
    for (std::size_t l = 4; l <= L; ++l) x[{1, l}] = stage(assistant.stage(l), x.at({1, l - 1}));
    for (std::size_t l = 3; l <= L; ++l) x[{2, l}] = stage(lead.stage(l), stage_input(2, l, x.at({2, l - 1})));
  }

  std::vector<Tensor4> out;
  for (std::size_t l = 2; l <= L; ++l) out.push_back(x.at({K, l}));
  return out;
}

// Closed-form learnable parameter counts (bias-free convs before BN).
inline std::uint64_t backbone_params(const BackboneSpec& s, std::size_t first_stage = 1) {
  auto ch = [&](std::size_t l) { return l == 0 ? s.stem_channels : s.stage_channels[l - 1]; };
  std::uint64_t total = 0;
  if (first_stage == 1) total += 9 * s.in_channels * s.stem_channels + 2 * s.stem_channels;
  for (std::size_t l = first_stage; l <= s.stages; ++l) {
    const std::uint64_t cin = ch(l - 1), c = ch(l);
    total += 9 * cin * c + 2 * c;          // downsample conv + bn
    total += 2 * (9 * c * c + 2 * c);      // residual block
  }
  return total;
}

inline std::uint64_t composite_params(const CBNetConfig& cfg) {
  const BackboneSpec& s = cfg.spec;
  auto ch = [&](std::size_t l) -> std::uint64_t { return l == 0 ? s.stem_channels : s.stage_channels[l - 1]; };
  auto available = [&](std::size_t level) { return !cfg.accelerated || level >= 3; };
  std::uint64_t total = 0;
  for (std::size_t k = 2; k <= cfg.k; ++k) {
    for (std::size_t l = cfg.accelerated ? 3 : 2; l <= s.stages; ++l) {
      const std::uint64_t target = ch(l - 1);
      auto conn = [&](std::size_t source) { total += ch(source) * target + 2 * target; };
      switch (cfg.style) {
        case CompositeStyle::AHLC: if (available(l)) conn(l); break;
        case CompositeStyle::SLC: break;
        case CompositeStyle::ALLC: if (l < s.stages && available(l + 1)) conn(l + 1); break;
        case CompositeStyle::DHLC:
          for (std::size_t i = l; i <= s.stages; ++i) {
            if (available(i)) conn(i);
          }
          break;
      }
    }
  }
  return total;
}

inline std::uint64_t cbnet_params(const CBNetConfig& cfg) {
  const std::uint64_t single = backbone_params(cfg.spec);
  std::uint64_t backbones = cfg.share_weights ? single : single * cfg.k;
  if (cfg.accelerated) backbones = single + backbone_params(cfg.spec, 3);
  return backbones + composite_params(cfg);
}

// Grid cell (gy, gx) is set iff some pixel of the box falls in it.
inline std::vector<std::uint8_t> grid_from_box(const PixelBox& box, std::size_t grid_h, std::size_t grid_w) {
  std::vector<std::uint8_t> grid(grid_h * grid_w, 0);
  for (std::size_t y = box.y0; y < box.y1; ++y) {
    for (std::size_t x = box.x0; x < box.x1; ++x) grid[(y / kCellSize) * grid_w + x / kCellSize] = 1;
  }
  return grid;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t correct_labels = 0;
};

// Cell-by-cell and sample-by-sample tally with the documented thresholds.
inline Confusion confusion(const HeadOutput& pred, const Batch& batch) {
  Confusion c;
  for (std::size_t i = 0; i < batch.grids.size(); ++i) {
    const bool predicted = 1.0 / (1.0 + std::exp(-pred.objectness[i])) > 0.5;
    const bool actual = batch.grids[i] != 0;
    if (predicted && actual) ++c.tp;
    if (predicted && !actual) ++c.fp;
    if (!predicted && actual) ++c.fn;
    if (!predicted && !actual) ++c.tn;
  }
  for (std::size_t n = 0; n < batch.labels.size(); ++n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < kClassCount; ++j) {
      if (pred.logits.at(n, j, 0, 0) > pred.logits.at(n, best, 0, 0)) best = j;
    }
    if (static_cast<int>(best) == batch.labels[n]) ++c.correct_labels;
  }
  return c;
}

}  // namespace cbnet::oracle
