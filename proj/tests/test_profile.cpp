#include <gtest/gtest.h>

#include "cbnet/profile.hpp"
#include "support/oracles.hpp"

using namespace cbnet;

namespace {

CBNetConfig config(std::size_t k, CompositeStyle style, bool share = false, bool accelerated = false) {
  CBNetConfig cfg;
  cfg.k = k;
  cfg.style = style;
  cfg.share_weights = share;
  cfg.accelerated = accelerated;
  return cfg;
}

// conv FLOPs of one backbone computed layer by layer from BackboneSpec.
std::uint64_t backbone_conv_flops(const BackboneSpec& s, std::size_t first_stage = 1) {
  auto ch = [&](std::size_t l) -> std::uint64_t { return l == 0 ? s.stem_channels : s.stage_channels[l - 1]; };
  std::uint64_t total = 0;
  if (first_stage == 1) total += 2 * s.in_channels * 9 * s.stem_channels * s.image_h * s.image_w;
  for (std::size_t l = first_stage; l <= s.stages; ++l) {
    const std::uint64_t hw = (s.image_h >> l) * (s.image_w >> l);
    total += 2 * ch(l - 1) * 9 * ch(l) * hw + 2 * 2 * ch(l) * 9 * ch(l) * hw;
  }
  return total;
}

}  // namespace

TEST(ParamCount, SharedDualAddsOnlyCompositeParameters) {
  for (CompositeStyle style : {CompositeStyle::AHLC, CompositeStyle::SLC, CompositeStyle::ALLC,
                               CompositeStyle::DHLC}) {
    const CBNetConfig shared = config(2, style, true);
    const CBNet single = build_cbnet(config(1, style), 1);
    const CBNet dual = build_cbnet(shared, 1);
    EXPECT_EQ(param_count(dual) - param_count(single), oracle::composite_params(shared));
    EXPECT_EQ(composite_param_count(dual), oracle::composite_params(shared));
  }
}

TEST(ParamCount, NonSharedDualIsTwoSinglesPlusComposite) {
  const CBNetConfig cfg = config(2, CompositeStyle::AHLC);
  const CBNet dual = build_cbnet(cfg, 1);
  const std::uint64_t single = oracle::backbone_params(cfg.spec);
  EXPECT_EQ(param_count(dual), 2 * single + oracle::composite_params(cfg));
  EXPECT_EQ(param_count(dual), oracle::cbnet_params(cfg));
}

TEST(ParamCount, MatchesOracleAcrossConfigs) {
  for (std::size_t k : {1u, 2u, 3u, 4u}) {
    for (CompositeStyle style : {CompositeStyle::AHLC, CompositeStyle::SLC, CompositeStyle::ALLC,
                                 CompositeStyle::DHLC}) {
      for (bool share : {false, true}) {
        const CBNetConfig cfg = config(k, style, share);
        EXPECT_EQ(param_count(build_cbnet(cfg, 2)), oracle::cbnet_params(cfg))
            << "k=" << k << " " << style_name(style) << " share=" << share;
      }
    }
  }
  for (CompositeStyle style : {CompositeStyle::AHLC, CompositeStyle::SLC, CompositeStyle::ALLC,
                               CompositeStyle::DHLC}) {
    const CBNetConfig cfg = config(2, style, false, true);
    EXPECT_EQ(param_count(build_cbnet(cfg, 2)), oracle::cbnet_params(cfg)) << style_name(style);
  }
}

TEST(ParamCount, AhlcCompositeClosedForm) {
  // g.2.l maps c_l to c_{l-1}: 16*8 + 32*16 + 64*32 + 128*64 weights plus 2*(8+16+32+64) bn.
  const CBNet dual = build_cbnet(config(2, CompositeStyle::AHLC), 1);
  EXPECT_EQ(composite_param_count(dual), 10880u + 240u);
}

TEST(FlopCount, ConvTermMatchesLayerSum) {
  const BackboneSpec spec;
  const Backbone b = build_backbone(spec, 1);
  EXPECT_EQ(flop_breakdown(b, spec.image_shape(1)).conv, backbone_conv_flops(spec));
  EXPECT_EQ(flop_breakdown(b, spec.image_shape(3)).conv, 3 * backbone_conv_flops(spec));
}

TEST(FlopCount, SingleBelowAcceleratedBelowFullDual) {
  const Shape image = BackboneSpec{}.image_shape(1);
  const std::uint64_t single = flop_count(build_cbnet(config(1, CompositeStyle::AHLC), 1), image);
  const std::uint64_t accelerated = flop_count(build_cbnet(config(2, CompositeStyle::AHLC, false, true), 1), image);
  const std::uint64_t dual = flop_count(build_cbnet(config(2, CompositeStyle::AHLC), 1), image);
  EXPECT_LT(single, accelerated);
  EXPECT_LT(accelerated, dual);
}

TEST(FlopCount, SingleCbnetEqualsBackbone) {
  const BackboneSpec spec;
  const CBNet net = build_cbnet(config(1, CompositeStyle::DHLC), 1);
  EXPECT_EQ(flop_count(net, spec.image_shape(1)), flop_count(net.backbone(1), spec.image_shape(1)));
}

TEST(FlopCount, MonotoneInBackboneCount) {
  const Shape image = BackboneSpec{}.image_shape(1);
  for (CompositeStyle style : {CompositeStyle::AHLC, CompositeStyle::SLC, CompositeStyle::ALLC,
                               CompositeStyle::DHLC}) {
    std::uint64_t previous = 0;
    for (std::size_t k = 1; k <= 4; ++k) {
      const std::uint64_t flops = flop_count(build_cbnet(config(k, style), 1), image);
      EXPECT_GT(flops, previous) << style_name(style) << " k=" << k;
      previous = flops;
    }
  }
}

TEST(FlopCount, SharingDoesNotChangeCompute) {
  const Shape image = BackboneSpec{}.image_shape(1);
  EXPECT_EQ(flop_count(build_cbnet(config(3, CompositeStyle::AHLC, true), 1), image),
            flop_count(build_cbnet(config(3, CompositeStyle::AHLC, false), 1), image));
}
