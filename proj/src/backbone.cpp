#include "cbnet/backbone.hpp"

#include <cmath>

#include "cbnet/gradcheck.hpp"

namespace cbnet {

void BackboneSpec::validate() const {
  if (stages < 2) throw ConfigError("backbone: need at least 2 stages, got " + std::to_string(stages));
  if (stage_channels.size() != stages) {
    throw ConfigError("backbone: stage_channels has " + std::to_string(stage_channels.size()) +
                      " entries for " + std::to_string(stages) + " stages");
  }
  if (stem_channels == 0 || in_channels == 0) throw ConfigError("backbone: channel counts must be positive");
  for (std::size_t c : stage_channels) {
    if (c == 0) throw ConfigError("backbone: channel counts must be positive");
  }
  if (stages >= 8 * sizeof(std::size_t)) throw ConfigError("backbone: too many stages");
  const std::size_t factor = std::size_t{1} << stages;
  if (image_h == 0 || image_w == 0 || image_h % factor != 0 || image_w % factor != 0) {
    throw ConfigError("backbone: image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " is not divisible by 2^" + std::to_string(stages));
  }
}

std::size_t BackboneSpec::channels(std::size_t level) const {
  if (level == 0) return stem_channels;
  return stage_channels.at(level - 1);
}

Shape BackboneSpec::level_shape(std::size_t level, std::size_t batch) const {
  return {batch, channels(level), image_h >> level, image_w >> level};
}

Shape BackboneSpec::image_shape(std::size_t batch) const {
  return {batch, in_channels, image_h, image_w};
}

BackboneSpec BackboneSpec::toy() {
  BackboneSpec spec;
  spec.stages = 4;
  spec.stem_channels = 4;
  spec.stage_channels = {4, 4, 8, 8};
  spec.image_h = 16;
  spec.image_w = 16;
  return spec;
}

ConvParams make_conv(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                     std::size_t pad, bool with_bias, Rng& rng) {
  ConvParams p;
  p.weight = Tensor4({c_out, c_in, kernel, kernel});
  p.weight.ensure_grad();
  p.stride = stride;
  p.pad = pad;
  const double fan_in = static_cast<double>(c_in * kernel * kernel);
  const double fan_out = static_cast<double>(c_out * kernel * kernel);
  const double s = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-s, s);
  for (double& v : p.weight.data()) v = dist(rng);
  if (with_bias) p.bias = ParamVector(c_out, 0.0);
  return p;
}

ConvBn make_conv_bn(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                    std::size_t pad, Rng& rng) {
  return {make_conv(c_in, c_out, kernel, stride, pad, false, rng), BatchNormParams(c_out)};
}

void append_views(ConvParams& conv, const std::string& prefix, std::vector<TensorView>& out) {
  const Shape& s = conv.weight.shape();
  conv.weight.ensure_grad();
  out.push_back({prefix + ".weight",
                 {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                  static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)},
                 conv.weight.data(), conv.weight.grad(), true});
  if (conv.has_bias()) {
    if (conv.bias.grad.size() != conv.bias.size()) conv.bias.zero_grad();
    out.push_back({prefix + ".bias", {static_cast<std::uint32_t>(conv.bias.size())},
                   conv.bias.value, conv.bias.grad, true});
  }
}

void append_views(BatchNormParams& bn, const std::string& prefix, std::vector<TensorView>& out) {
  const auto c = static_cast<std::uint32_t>(bn.channels());
  if (bn.gamma.grad.size() != c) bn.gamma.zero_grad();
  if (bn.beta.grad.size() != c) bn.beta.zero_grad();
  out.push_back({prefix + ".gamma", {c}, bn.gamma.value, bn.gamma.grad, true});
  out.push_back({prefix + ".beta", {c}, bn.beta.value, bn.beta.grad, true});
  out.push_back({prefix + ".running_mean", {c}, bn.running_mean, {}, false});
  out.push_back({prefix + ".running_var", {c}, bn.running_var, {}, false});
}

void append_views(ConvBn& layer, const std::string& prefix, std::vector<TensorView>& out) {
  append_views(layer.conv, prefix + ".conv", out);
  append_views(layer.bn, prefix + ".bn", out);
}

Tensor4 conv_bn_forward(const ConvBn& layer, const Tensor4& input, ConvBnTrace* trace) {
  Tensor4 conv_out = conv2d(input, layer.conv);
  if (!trace) return batchnorm(conv_out, layer.bn);
  trace->input = input;
  return batchnorm(conv_out, layer.bn, &trace->bn);
}

Tensor4 conv_bn_backward(ConvBn& layer, const ConvBnTrace& trace, const Tensor4& grad_out) {
  const Tensor4 grad_conv = batchnorm_backward(trace.bn, layer.bn, grad_out);
  return conv2d_backward(trace.input, layer.conv, grad_conv);
}

Tensor4 stem_forward(const ConvBn& stem, const Tensor4& image, StemTrace* trace) {
  Tensor4 out = relu(conv_bn_forward(stem, image, trace ? &trace->layer : nullptr));
  if (trace) trace->output = out;
  return out;
}

Tensor4 stem_backward(ConvBn& stem, const StemTrace& trace, const Tensor4& grad_out) {
  return conv_bn_backward(stem, trace.layer, relu_backward(trace.output, grad_out));
}

Tensor4 stage_forward(const StageParams& stage, const Tensor4& input, StageTrace* trace) {
  Tensor4 down = relu(conv_bn_forward(stage.down, input, trace ? &trace->down : nullptr));
  Tensor4 a = relu(conv_bn_forward(stage.conv_a, down, trace ? &trace->conv_a : nullptr));
  Tensor4 b = conv_bn_forward(stage.conv_b, a, trace ? &trace->conv_b : nullptr);
  Tensor4 out = relu(add(b, down));
  if (trace) {
    trace->down_out = std::move(down);
    trace->a_out = std::move(a);
    trace->output = out;
  }
  return out;
}

Tensor4 stage_backward(StageParams& stage, const StageTrace& trace, const Tensor4& grad_out) {
  const Tensor4 grad_sum = relu_backward(trace.output, grad_out);
  const Tensor4 grad_a = conv_bn_backward(stage.conv_b, trace.conv_b, grad_sum);
  Tensor4 grad_down = conv_bn_backward(stage.conv_a, trace.conv_a, relu_backward(trace.a_out, grad_a));
  grad_down.accumulate(grad_sum);
  return conv_bn_backward(stage.down, trace.down, relu_backward(trace.down_out, grad_down));
}

void commit_running_stats(ConvBn& layer, const ConvBnTrace& trace) {
  update_running_stats(layer.bn, trace.bn);
}

void commit_running_stats(StageParams& stage, const StageTrace& trace) {
  commit_running_stats(stage.down, trace.down);
  commit_running_stats(stage.conv_a, trace.conv_a);
  commit_running_stats(stage.conv_b, trace.conv_b);
}

std::uint64_t stage_signature(std::uint64_t hash, const StageTrace& trace) {
  hash = fold_sign_pattern(hash, trace.down_out.data());
  hash = fold_sign_pattern(hash, trace.a_out.data());
  return fold_sign_pattern(hash, trace.output.data());
}

Backbone build_backbone(const BackboneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  auto params = std::make_shared<BackboneParams>();
  params->stem = make_conv_bn(spec.in_channels, spec.stem_channels, 3, 1, 1, rng);
  params->first_stage = 1;
  for (std::size_t l = 1; l <= spec.stages; ++l) {
    const std::size_t c_in = spec.channels(l - 1);
    const std::size_t c = spec.channels(l);
    StageParams stage{make_conv_bn(c_in, c, 3, 2, 1, rng), make_conv_bn(c, c, 3, 1, 1, rng),
                      make_conv_bn(c, c, 3, 1, 1, rng)};
    params->stages.push_back(std::move(stage));
  }
  return {spec, std::move(params)};
}

StageOutputs backbone_forward(const Backbone& backbone, const Tensor4& image) {
  const BackboneSpec& spec = backbone.spec;
  const BackboneParams& p = *backbone.params;
  if (image.shape().c != spec.in_channels || image.shape().h != spec.image_h ||
      image.shape().w != spec.image_w || image.shape().n == 0) {
    throw ShapeError("backbone_forward: image " + image.shape().str() + " does not match " +
                     spec.image_shape(image.shape().n).str());
  }
  if (!p.stem || p.first_stage != 1) {
    throw ConfigError("backbone_forward: backbone has no stem (truncated assistant)");
  }
  StageOutputs outputs;
  outputs.reserve(spec.stages);
  Tensor4 x = stem_forward(*p.stem, image);
  for (std::size_t l = 1; l <= spec.stages; ++l) {
    x = stage_forward(p.stage(l), x);
    outputs.push_back(x);
  }
  return outputs;
}

std::vector<TensorView> backbone_tensors(BackboneParams& params, const std::string& prefix) {
  std::vector<TensorView> out;
  if (params.stem) append_views(*params.stem, prefix + "stem", out);
  for (std::size_t l = params.first_stage; l <= params.last_stage(); ++l) {
    const std::string base = prefix + "stage" + std::to_string(l);
    StageParams& s = params.stage(l);
    append_views(s.down, base + ".down", out);
    append_views(s.conv_a, base + ".conv_a", out);
    append_views(s.conv_b, base + ".conv_b", out);
  }
  return out;
}

std::size_t backbone_param_count(const BackboneParams& params) {
  auto layer = [](const ConvBn& l) { return l.conv.param_count() + l.bn.param_count(); };
  std::size_t total = params.stem ? layer(*params.stem) : 0;
  for (const StageParams& s : params.stages) total += layer(s.down) + layer(s.conv_a) + layer(s.conv_b);
  return total;
}

void set_bn_mode(BackboneParams& params, BnMode mode) {
  if (params.stem) params.stem->bn.mode = mode;
  for (StageParams& s : params.stages) {
    s.down.bn.mode = mode;
    s.conv_a.bn.mode = mode;
    s.conv_b.bn.mode = mode;
  }
}

void zero_grad(BackboneParams& params) {
  auto layer = [](ConvBn& l) {
    l.conv.zero_grad();
    l.bn.zero_grad();
  };
  if (params.stem) layer(*params.stem);
  for (StageParams& s : params.stages) {
    layer(s.down);
    layer(s.conv_a);
    layer(s.conv_b);
  }
}

}  // namespace cbnet
