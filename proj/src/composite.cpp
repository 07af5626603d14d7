#include "cbnet/composite.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "cbnet/gradcheck.hpp"

namespace cbnet {
namespace {

void accumulate_into(Tensor4& target, const Tensor4& grad) {
  if (target.empty()) {
    target = grad;
  } else {
    target.accumulate(grad);
  }
}

constexpr std::uint64_t kConnectionSeedSalt = 0x9e3779b97f4a7c15ull;

}  // namespace

std::string_view style_name(CompositeStyle style) {
  switch (style) {
    case CompositeStyle::AHLC: return "ahlc";
    case CompositeStyle::SLC: return "slc";
    case CompositeStyle::ALLC: return "allc";
    case CompositeStyle::DHLC: return "dhlc";
  }
  return "?";
}

CompositeStyle parse_style(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "ahlc") return CompositeStyle::AHLC;
  if (lower == "slc") return CompositeStyle::SLC;
  if (lower == "allc") return CompositeStyle::ALLC;
  if (lower == "dhlc" || lower == "adlc") return CompositeStyle::DHLC;
  throw ConfigError("unknown composite style '" + std::string(text) + "'");
}

CompositeConnection make_composite(std::size_t source_channels, std::size_t target_channels,
                                   std::size_t target_h, std::size_t target_w, Rng& rng) {
  return {make_conv(source_channels, target_channels, 1, 1, 0, false, rng),
          BatchNormParams(target_channels), target_h, target_w};
}

Tensor4 composite_apply(const CompositeConnection& g, const Tensor4& source, CompositeTrace* trace) {
  if (g.conv.kernel() != 1) throw ConfigError("composite connection must use a 1x1 convolution");
  Tensor4 reduced = conv2d(source, g.conv);
  Tensor4 normalized = batchnorm(reduced, g.bn, trace ? &trace->bn : nullptr);
  if (trace) {
    trace->source = source;
    trace->resize_input = normalized.shape();
  }
  return upsample_nearest(normalized, g.target_h, g.target_w);
}

Tensor4 composite_backward(CompositeConnection& g, const CompositeTrace& trace,
                           const Tensor4& grad_out) {
  const Tensor4 grad_bn = upsample_nearest_backward(grad_out, trace.resize_input);
  const Tensor4 grad_conv = batchnorm_backward(trace.bn, g.bn, grad_bn);
  return conv2d_backward(trace.source, g.conv, grad_conv);
}

std::string ConnectionKey::name() const {
  std::string s = "g." + std::to_string(k) + "." + std::to_string(l);
  if (i) s += "." + std::to_string(*i);
  return s;
}

void CBNetConfig::validate() const {
  spec.validate();
  if (k < 1) throw ConfigError("cbnet: need at least one backbone");
  if (accelerated && k != 2) throw ConfigError("cbnet: the accelerated variant requires k = 2");
  if (accelerated && spec.stages < 3) throw ConfigError("cbnet: the accelerated variant needs >= 3 stages");
  if (accelerated && share_weights) {
    throw ConfigError("cbnet: weight sharing is not supported together with the accelerated variant");
  }
}

CBNet CBNet::build(const CBNetConfig& config, std::uint64_t seed) {
  config.validate();
  CBNet net;
  net.config_ = config;

  // Every backbone starts from the same single-backbone initialization.
  const Backbone base = build_backbone(config.spec, seed);
  for (std::size_t k = 1; k <= config.k; ++k) {
    Backbone b{config.spec, nullptr};
    if (config.share_weights) {
      b.params = base.params;
    } else {
      b.params = std::make_shared<BackboneParams>(*base.params);
      if (config.accelerated && k < config.k) {
        b.params->stem.reset();
        b.params->stages.erase(b.params->stages.begin(), b.params->stages.begin() + 2);
        b.params->first_stage = 3;
      }
    }
    net.backbones_.push_back(std::move(b));
  }

  net.compile();

  Rng rng(seed ^ kConnectionSeedSalt);
  std::set<ConnectionKey> keys;
  for (const PlanStep& step : net.plan_) {
    for (const CompositeTerm& t : step.terms) {
      if (t.connection) keys.insert(*t.connection);
    }
  }
  const BackboneSpec& spec = config.spec;
  for (const ConnectionKey& key : keys) {
    const std::size_t source_level = key.i ? *key.i : (config.style == CompositeStyle::ALLC ? key.l + 1 : key.l);
    const Shape target = spec.level_shape(key.l - 1);
    net.connections_.emplace(key, make_composite(spec.channels(source_level), target.c, target.h,
                                                 target.w, rng));
  }

  // Build-time shape check of every addition in the plan.
  for (const PlanStep& step : net.plan_) {
    const Shape input = step.from_image ? spec.image_shape() : spec.level_shape(step.input_level);
    const Shape expected = step.level == 0 ? spec.image_shape() : spec.level_shape(step.level - 1);
    if (!(input == expected)) throw std::logic_error("cbnet: stage input shape mismatch in plan");
    for (const CompositeTerm& t : step.terms) {
      const Shape source = spec.level_shape(t.source_level);
      if (!t.connection) {
        if (!(source == input)) throw std::logic_error("cbnet: direct addition shape mismatch");
        continue;
      }
      const CompositeConnection& g = net.connections_.at(*t.connection);
      const Shape out{1, g.conv.c_out(), g.target_h, g.target_w};
      if (g.conv.c_in() != source.c || !(out == input) || g.target_h % source.h != 0 ||
          g.target_w % source.w != 0) {
        throw std::logic_error("cbnet: composite connection " + t.connection->name() +
                               " does not map " + source.str() + " onto " + input.str());
      }
    }
  }
  return net;
}

void CBNet::compile() {
  const std::size_t big_k = config_.k;
  const std::size_t big_l = config_.spec.stages;
  auto has_level = [&](std::size_t b, std::size_t level) {
    const BackboneParams& p = *backbones_[b - 1].params;
    if (config_.accelerated && b < big_k) return level >= 3 && p.has_stage(level);
    return level == 0 ? p.stem.has_value() : p.has_stage(level);
  };
  auto terms_for = [&](std::size_t k, std::size_t l) {
    std::vector<CompositeTerm> terms;
    if (k < 2 || l < 2 || (config_.accelerated && l < 3)) return terms;
    const std::size_t src = k - 1;
    switch (config_.style) {
      case CompositeStyle::AHLC:
        if (has_level(src, l)) terms.push_back({src, l, ConnectionKey{k, l, std::nullopt}});
        break;
      case CompositeStyle::SLC:
        if (has_level(src, l - 1)) terms.push_back({src, l - 1, std::nullopt});
        break;
      case CompositeStyle::ALLC:
        if (l < big_l && has_level(src, l + 1)) {
          terms.push_back({src, l + 1, ConnectionKey{k, l, std::nullopt}});
        }
        break;
      case CompositeStyle::DHLC:
        for (std::size_t i = l; i <= big_l; ++i) {
          if (has_level(src, i)) terms.push_back({src, i, ConnectionKey{k, l, i}});
        }
        break;
    }
    return terms;
  };
  auto stage_step = [&](std::size_t k, std::size_t l, std::size_t input_backbone) {
    return PlanStep{k, l, false, input_backbone, l - 1, terms_for(k, l)};
  };

  plan_.clear();
  if (!config_.accelerated) {
    for (std::size_t k = 1; k <= big_k; ++k) {
      plan_.push_back({k, 0, true, 0, 0, {}});
      for (std::size_t l = 1; l <= big_l; ++l) plan_.push_back(stage_step(k, l, k));
    }
    return;
  }
  // Accelerated dual: the truncated assistant's stage 3 reads the lead's
  // stage-2 output, and the lead's stages 3..L read the assistant.
  const std::size_t lead = big_k;
  const std::size_t assistant = lead - 1;
  plan_.push_back({lead, 0, true, 0, 0, {}});
  plan_.push_back(stage_step(lead, 1, lead));
  plan_.push_back(stage_step(lead, 2, lead));
  plan_.push_back(stage_step(assistant, 3, lead));
  for (std::size_t l = 4; l <= big_l; ++l) plan_.push_back(stage_step(assistant, l, assistant));
  for (std::size_t l = 3; l <= big_l; ++l) plan_.push_back(stage_step(lead, l, lead));
}

CBNet CBNet::clone() const {
  CBNet copy;
  copy.config_ = config_;
  std::unordered_map<const BackboneParams*, std::shared_ptr<BackboneParams>> copies;
  for (const Backbone& b : backbones_) {
    auto& slot = copies[b.params.get()];
    if (!slot) slot = std::make_shared<BackboneParams>(*b.params);
    copy.backbones_.push_back({b.spec, slot});
  }
  copy.connections_ = connections_;
  copy.plan_ = plan_;
  return copy;
}

std::size_t CBNet::direct_additions() const {
  std::size_t n = 0;
  for (const PlanStep& step : plan_) {
    n += static_cast<std::size_t>(std::count_if(step.terms.begin(), step.terms.end(),
                                                [](const CompositeTerm& t) { return !t.connection; }));
  }
  return n;
}

FeaturePyramid CBNet::forward(const Tensor4& image, ForwardTrace* trace) const {
  const BackboneSpec& spec = config_.spec;
  const Shape& s = image.shape();
  if (s.n == 0 || s.c != spec.in_channels || s.h != spec.image_h || s.w != spec.image_w) {
    throw ShapeError("cbnet_forward: image " + s.str() + " does not match " +
                     spec.image_shape(s.n == 0 ? 1 : s.n).str());
  }
  std::vector<Tensor4> local_values;
  std::vector<Tensor4>& values = trace ? trace->values : local_values;
  values.assign(config_.k * (spec.stages + 1), Tensor4{});
  if (trace) {
    trace->image = image;
    trace->image_grad = Tensor4{};
    trace->steps.assign(plan_.size(), StepTrace{});
  }

  for (std::size_t idx = 0; idx < plan_.size(); ++idx) {
    const PlanStep& step = plan_[idx];
    StepTrace* st = trace ? &trace->steps[idx] : nullptr;
    const BackboneParams& params = *backbones_[step.backbone - 1].params;
    if (step.level == 0) {
      values[value_index(step.backbone, 0)] = stem_forward(*params.stem, image, st ? &st->stem : nullptr);
      continue;
    }
    Tensor4 input = values[value_index(step.input_backbone, step.input_level)];
    if (st) st->terms.resize(step.terms.size());
    for (std::size_t t = 0; t < step.terms.size(); ++t) {
      const CompositeTerm& term = step.terms[t];
      const Tensor4& source = values[value_index(term.source_backbone, term.source_level)];
      if (term.connection) {
        input = add(input, composite_apply(connections_.at(*term.connection), source,
                                           st ? &st->terms[t] : nullptr));
      } else {
        input = add(input, source);
      }
    }
    values[value_index(step.backbone, step.level)] =
        stage_forward(params.stage(step.level), input, st ? &st->stage : nullptr);
  }

  FeaturePyramid pyramid;
  pyramid.first_level = 2;
  for (std::size_t l = 2; l <= spec.stages; ++l) {
    pyramid.levels.push_back(values[value_index(config_.k, l)]);
  }
  return pyramid;
}

void CBNet::backward(ForwardTrace& trace, const std::vector<Tensor4>& level_grads) {
  const std::size_t big_l = config_.spec.stages;
  if (level_grads.size() != big_l - 1) {
    throw ShapeError("cbnet backward: expected " + std::to_string(big_l - 1) + " level gradients");
  }
  std::vector<Tensor4> grads(trace.values.size());
  for (std::size_t l = 2; l <= big_l; ++l) {
    const Tensor4& g = level_grads[l - 2];
    if (g.empty()) continue;
    require_same_shape(trace.values[value_index(config_.k, l)], g, "cbnet backward");
    grads[value_index(config_.k, l)] = g;
  }

  for (std::size_t idx = plan_.size(); idx-- > 0;) {
    const PlanStep& step = plan_[idx];
    StepTrace& st = trace.steps[idx];
    Tensor4& grad_out = grads[value_index(step.backbone, step.level)];
    if (grad_out.empty()) continue;
    BackboneParams& params = *backbones_[step.backbone - 1].params;
    if (step.level == 0) {
      accumulate_into(trace.image_grad, stem_backward(*params.stem, st.stem, grad_out));
      continue;
    }
    const Tensor4 grad_in = stage_backward(params.stage(step.level), st.stage, grad_out);
    for (std::size_t t = 0; t < step.terms.size(); ++t) {
      const CompositeTerm& term = step.terms[t];
      Tensor4& target = grads[value_index(term.source_backbone, term.source_level)];
      if (term.connection) {
        accumulate_into(target, composite_backward(connections_.at(*term.connection), st.terms[t], grad_in));
      } else {
        accumulate_into(target, grad_in);
      }
    }
    accumulate_into(grads[value_index(step.input_backbone, step.input_level)], grad_in);
  }
}

void CBNet::commit_running_stats(const ForwardTrace& trace) {
  for (std::size_t idx = 0; idx < plan_.size(); ++idx) {
    const PlanStep& step = plan_[idx];
    const StepTrace& st = trace.steps.at(idx);
    BackboneParams& params = *backbones_[step.backbone - 1].params;
    if (step.level == 0) {
      cbnet::commit_running_stats(*params.stem, st.stem.layer);
      continue;
    }
    for (std::size_t t = 0; t < step.terms.size(); ++t) {
      if (step.terms[t].connection) {
        update_running_stats(connections_.at(*step.terms[t].connection).bn, st.terms[t].bn);
      }
    }
    cbnet::commit_running_stats(params.stage(step.level), st.stage);
  }
}

std::uint64_t CBNet::branch_signature(const ForwardTrace& trace) const {
  std::uint64_t hash = kSignatureSeed;
  for (std::size_t idx = 0; idx < plan_.size(); ++idx) {
    const StepTrace& st = trace.steps.at(idx);
    hash = plan_[idx].level == 0 ? fold_sign_pattern(hash, st.stem.output.data())
                                 : stage_signature(hash, st.stage);
  }
  return hash;
}

std::vector<TensorView> CBNet::connection_tensors() {
  std::vector<TensorView> out;
  for (auto& [key, g] : connections_) {
    append_views(g.conv, key.name() + ".conv", out);
    append_views(g.bn, key.name() + ".bn", out);
  }
  return out;
}

std::vector<TensorView> CBNet::named_tensors() {
  std::vector<TensorView> out;
  for (std::size_t k = 1; k <= backbones_.size(); ++k) {
    auto views = backbone_tensors(*backbones_[k - 1].params, "b" + std::to_string(k) + ".");
    out.insert(out.end(), views.begin(), views.end());
  }
  auto g = connection_tensors();
  out.insert(out.end(), g.begin(), g.end());
  return out;
}

std::vector<TensorView> CBNet::unique_tensors() {
  std::vector<TensorView> out;
  std::set<const double*> seen;
  for (TensorView& v : named_tensors()) {
    if (seen.insert(v.value.data()).second) out.push_back(std::move(v));
  }
  return out;
}

std::vector<BackboneParams*> CBNet::unique_stores() {
  std::vector<BackboneParams*> out;
  for (Backbone& b : backbones_) {
    if (std::find(out.begin(), out.end(), b.params.get()) == out.end()) out.push_back(b.params.get());
  }
  return out;
}

void CBNet::set_bn_mode(BnMode mode) {
  for (BackboneParams* p : unique_stores()) cbnet::set_bn_mode(*p, mode);
  for (auto& [key, g] : connections_) g.bn.mode = mode;
}

void CBNet::zero_grad() {
  for (BackboneParams* p : unique_stores()) cbnet::zero_grad(*p);
  for (auto& [key, g] : connections_) {
    g.conv.zero_grad();
    g.bn.zero_grad();
  }
}

CBNet build_cbnet(const CBNetConfig& config, std::uint64_t seed) { return CBNet::build(config, seed); }

FeaturePyramid cbnet_forward(const CBNet& net, const Tensor4& image) { return net.forward(image); }

void load_backbone_into_all(CBNet& net, const TensorList& single) {
  std::set<const BackboneParams*> done;
  for (std::size_t k = 1; k <= net.backbone_count(); ++k) {
    BackboneParams& p = *net.backbone(k).params;
    if (!done.insert(&p).second) continue;
    import_tensors(backbone_tensors(p), single);
  }
}

}  // namespace cbnet
