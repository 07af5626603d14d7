#include "cbnet/profile.hpp"

#include <set>

namespace cbnet {
namespace {

std::uint64_t conv_flops(const ConvParams& conv, const Shape& out) {
  return 2ull * conv.c_in() * conv.kernel() * conv.kernel() * conv.c_out() * out.h * out.w * out.n;
}

void check_image(const BackboneSpec& spec, const Shape& image) {
  if (image.n == 0 || !(image == spec.image_shape(image.n))) {
    throw ShapeError("flop_count: image " + image.str() + " does not match " +
                     spec.image_shape(image.n == 0 ? 1 : image.n).str());
  }
}

void add_conv_bn(FlopBreakdown& f, const ConvBn& layer, const Shape& out, bool with_relu) {
  f.conv += conv_flops(layer.conv, out);
  f.batchnorm += out.numel();
  if (with_relu) f.relu += out.numel();
}

void add_stem(FlopBreakdown& f, const ConvBn& stem, const BackboneSpec& spec, std::size_t n) {
  add_conv_bn(f, stem, spec.level_shape(0, n), true);
}

void add_stage(FlopBreakdown& f, const StageParams& stage, const BackboneSpec& spec, std::size_t l,
               std::size_t n) {
  const Shape out = spec.level_shape(l, n);
  add_conv_bn(f, stage.down, out, true);
  add_conv_bn(f, stage.conv_a, out, true);
  add_conv_bn(f, stage.conv_b, out, false);
  f.add += out.numel();
  f.relu += out.numel();
}

}  // namespace

std::uint64_t param_count(const Backbone& backbone) { return backbone_param_count(*backbone.params); }

std::uint64_t composite_param_count(const CBNet& net) {
  std::uint64_t total = 0;
  for (const auto& [key, g] : net.connections()) total += g.param_count();
  return total;
}

std::uint64_t param_count(const CBNet& net) {
  std::set<const BackboneParams*> seen;
  std::uint64_t total = 0;
  for (std::size_t k = 1; k <= net.backbone_count(); ++k) {
    const BackboneParams* p = net.backbone(k).params.get();
    if (seen.insert(p).second) total += backbone_param_count(*p);
  }
  return total + composite_param_count(net);
}

FlopBreakdown flop_breakdown(const Backbone& backbone, const Shape& image) {
  const BackboneSpec& spec = backbone.spec;
  check_image(spec, image);
  const BackboneParams& p = *backbone.params;
  FlopBreakdown f;
  if (p.stem) add_stem(f, *p.stem, spec, image.n);
  for (std::size_t l = p.first_stage; l <= p.last_stage(); ++l) add_stage(f, p.stage(l), spec, l, image.n);
  return f;
}

FlopBreakdown flop_breakdown(const CBNet& net, const Shape& image) {
  const BackboneSpec& spec = net.spec();
  check_image(spec, image);
  const std::size_t n = image.n;
  FlopBreakdown f;
  for (const PlanStep& step : net.plan()) {
    const BackboneParams& p = *net.backbone(step.backbone).params;
    if (step.level == 0) {
      add_stem(f, *p.stem, spec, n);
      continue;
    }
    const Shape target = spec.level_shape(step.level - 1, n);
    for (const CompositeTerm& t : step.terms) {
      if (t.connection) {
        const CompositeConnection& g = net.connections().at(*t.connection);
        const Shape source = spec.level_shape(t.source_level, n);
        const Shape reduced{n, g.conv.c_out(), source.h, source.w};
        f.conv += conv_flops(g.conv, reduced);
        f.batchnorm += reduced.numel();
        f.upsample += target.numel();
      }
      f.add += target.numel();
    }
    add_stage(f, p.stage(step.level), spec, step.level, n);
  }
  return f;
}

std::uint64_t flop_count(const Backbone& backbone, const Shape& image) {
  return flop_breakdown(backbone, image).total();
}

std::uint64_t flop_count(const CBNet& net, const Shape& image) { return flop_breakdown(net, image).total(); }

}  // namespace cbnet
