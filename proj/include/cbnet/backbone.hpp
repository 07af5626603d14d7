#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cbnet/ops.hpp"
#include "cbnet/tensor.hpp"
#include "cbnet/weights.hpp"

namespace cbnet {

using Rng = std::mt19937_64;

struct BackboneSpec {
  std::size_t stages = 5;
  std::size_t stem_channels = 8;
  std::vector<std::size_t> stage_channels{8, 16, 32, 64, 128};
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  std::size_t in_channels = 3;

  void validate() const;

  // Level 0 is the stem output, levels 1..stages are stage outputs.
  std::size_t channels(std::size_t level) const;
  Shape level_shape(std::size_t level, std::size_t batch = 1) const;
  Shape image_shape(std::size_t batch = 1) const;

  // 16x16 images, four stages; small enough for exhaustive gradient checks.
  static BackboneSpec toy();

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

struct ConvBn {
  ConvParams conv;
  BatchNormParams bn;
};

// Stride-2 downsample conv+bn+relu followed by one residual block of two
// 3x3 conv+bn pairs; the block output is relu(bn(conv_b(...)) + downsampled).
struct StageParams {
  ConvBn down;
  ConvBn conv_a;
  ConvBn conv_b;
};

// Parameter store of one backbone. An accelerated assistant has no stem and
// starts at first_stage = 3.
struct BackboneParams {
  std::optional<ConvBn> stem;
  std::size_t first_stage = 1;
  std::vector<StageParams> stages;

  bool has_stage(std::size_t l) const {
    return l >= first_stage && l < first_stage + stages.size();
  }
  StageParams& stage(std::size_t l) { return stages.at(l - first_stage); }
  const StageParams& stage(std::size_t l) const { return stages.at(l - first_stage); }
  std::size_t last_stage() const { return first_stage + stages.size() - 1; }
};

struct Backbone {
  BackboneSpec spec;
  std::shared_ptr<BackboneParams> params;
};

// x^1..x^L, element l-1 holds stage l.
using StageOutputs = std::vector<Tensor4>;

// --- layer helpers shared by the backbone, composite connections and head ---

// Uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)).
ConvParams make_conv(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                     std::size_t pad, bool with_bias, Rng& rng);
ConvBn make_conv_bn(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                    std::size_t pad, Rng& rng);

void append_views(ConvParams& conv, const std::string& prefix, std::vector<TensorView>& out);
void append_views(BatchNormParams& bn, const std::string& prefix, std::vector<TensorView>& out);
void append_views(ConvBn& layer, const std::string& prefix, std::vector<TensorView>& out);

struct ConvBnTrace {
  Tensor4 input;
  BatchNormCache bn;
};

struct StemTrace {
  ConvBnTrace layer;
  Tensor4 output;
};

struct StageTrace {
  ConvBnTrace down;
  ConvBnTrace conv_a;
  ConvBnTrace conv_b;
  Tensor4 down_out;
  Tensor4 a_out;
  Tensor4 output;
};

Tensor4 conv_bn_forward(const ConvBn& layer, const Tensor4& input, ConvBnTrace* trace);
Tensor4 conv_bn_backward(ConvBn& layer, const ConvBnTrace& trace, const Tensor4& grad_out);

Tensor4 stem_forward(const ConvBn& stem, const Tensor4& image, StemTrace* trace = nullptr);
Tensor4 stem_backward(ConvBn& stem, const StemTrace& trace, const Tensor4& grad_out);

Tensor4 stage_forward(const StageParams& stage, const Tensor4& input, StageTrace* trace = nullptr);
Tensor4 stage_backward(StageParams& stage, const StageTrace& trace, const Tensor4& grad_out);

void commit_running_stats(ConvBn& layer, const ConvBnTrace& trace);
void commit_running_stats(StageParams& stage, const StageTrace& trace);

std::uint64_t stage_signature(std::uint64_t hash, const StageTrace& trace);

// --- backbone ---

Backbone build_backbone(const BackboneSpec& spec, std::uint64_t seed);

// x^l = F^l(x^{l-1}) with x^0 the stem output.
StageOutputs backbone_forward(const Backbone& backbone, const Tensor4& image);

// Names: "stem.*" and "stage{l}.{down,conv_a,conv_b}.{conv,bn}.*", each prefixed.
std::vector<TensorView> backbone_tensors(BackboneParams& params, const std::string& prefix = "");
std::size_t backbone_param_count(const BackboneParams& params);
void set_bn_mode(BackboneParams& params, BnMode mode);
void zero_grad(BackboneParams& params);

}  // namespace cbnet
