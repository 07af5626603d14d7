#include <gtest/gtest.h>

#include "cbnet/backbone.hpp"
#include "cbnet/model_check.hpp"
#include "cbnet/profile.hpp"
#include "support/oracles.hpp"

using namespace cbnet;

namespace {

BackboneSpec make_spec(std::size_t stages, std::size_t stem, std::vector<std::size_t> channels,
                       std::size_t size) {
  BackboneSpec s;
  s.stages = stages;
  s.stem_channels = stem;
  s.stage_channels = std::move(channels);
  s.image_h = s.image_w = size;
  return s;
}

}  // namespace

TEST(Backbone, SameSeedIsBitIdentical) {
  Backbone a = build_backbone(BackboneSpec{}, 9);
  Backbone b = build_backbone(BackboneSpec{}, 9);
  Backbone c = build_backbone(BackboneSpec{}, 10);
  const TensorList ta = export_tensors(backbone_tensors(*a.params));
  EXPECT_EQ(ta, export_tensors(backbone_tensors(*b.params)));
  EXPECT_NE(ta, export_tensors(backbone_tensors(*c.params)));
}

TEST(Backbone, ParamCountMatchesPerLayerOracle) {
  const std::vector<BackboneSpec> specs{
      BackboneSpec{},
      BackboneSpec::toy(),
      make_spec(2, 3, {5, 7}, 8),
      make_spec(3, 16, {16, 32, 64}, 32),
  };
  for (const BackboneSpec& spec : specs) {
    const Backbone b = build_backbone(spec, 1);
    EXPECT_EQ(param_count(b), oracle::backbone_params(spec));
    EXPECT_EQ(backbone_param_count(*b.params), oracle::backbone_params(spec));
  }
}

TEST(Backbone, DefaultSpecShapes) {
  const Backbone b = build_backbone(BackboneSpec{}, 1);
  const StageOutputs out = backbone_forward(b, random_image(b.spec, 1, 2));
  const std::vector<Shape> expected{{1, 8, 32, 32}, {1, 16, 16, 16}, {1, 32, 8, 8}, {1, 64, 4, 4}, {1, 128, 2, 2}};
  ASSERT_EQ(out.size(), expected.size());
  for (std::size_t l = 0; l < out.size(); ++l) EXPECT_EQ(out[l].shape(), expected[l]);
}

TEST(Backbone, EachStageHalvesSpatialDims) {
  const BackboneSpec spec = make_spec(3, 4, {6, 6, 10}, 24);
  const Backbone b = build_backbone(spec, 5);
  const StageOutputs out = backbone_forward(b, random_image(spec, 2, 6));
  std::size_t h = spec.image_h;
  for (std::size_t l = 1; l <= spec.stages; ++l) {
    h /= 2;
    EXPECT_EQ(out[l - 1].shape(), (Shape{2, spec.stage_channels[l - 1], h, h}));
    EXPECT_EQ(out[l - 1].shape(), spec.level_shape(l, 2));
  }
}

TEST(Backbone, MinimalTwoStageSpec) {
  const BackboneSpec spec = make_spec(2, 2, {3, 4}, 4);
  const Backbone b = build_backbone(spec, 1);
  const StageOutputs out = backbone_forward(b, random_image(spec, 1, 1));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[1].shape(), (Shape{1, 4, 1, 1}));
}

TEST(Backbone, ForwardMatchesManualChaining) {
  const BackboneSpec spec = BackboneSpec::toy();
  const Backbone b = build_backbone(spec, 21);
  const Tensor4 image = random_image(spec, 2, 22);
  const StageOutputs out = backbone_forward(b, image);
  Tensor4 x = relu(oracle::conv_bn(*b.params->stem, image));
  for (std::size_t l = 1; l <= spec.stages; ++l) {
    x = oracle::stage(b.params->stage(l), x);
    ASSERT_EQ(out[l - 1].shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out[l - 1][i], x[i], 1e-12);
  }
}

TEST(Backbone, ZeroImageWithZeroBetaGivesZeros) {
  const BackboneSpec spec = BackboneSpec{};
  Backbone b = build_backbone(spec, 4);
  set_bn_mode(*b.params, BnMode::Inference);
  const StageOutputs out = backbone_forward(b, Tensor4(spec.image_shape(1)));
  for (const Tensor4& t : out)
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, ForwardDoesNotMutateParameters) {
  Backbone b = build_backbone(BackboneSpec::toy(), 4);
  const TensorList before = export_tensors(backbone_tensors(*b.params));
  backbone_forward(b, random_image(b.spec, 2, 3));
  EXPECT_EQ(export_tensors(backbone_tensors(*b.params)), before);
}

TEST(Backbone, TensorNames) {
  Backbone b = build_backbone(BackboneSpec::toy(), 1);
  const auto views = backbone_tensors(*b.params, "b1.");
  ASSERT_FALSE(views.empty());
  EXPECT_EQ(views.front().name, "b1.stem.conv.weight");
  bool found = false;
  for (const TensorView& v : views) {
    if (v.name == "b1.stage3.conv_b.bn.running_var") {
      found = true;
      EXPECT_FALSE(v.learnable);
    }
  }
  EXPECT_TRUE(found);
}

TEST(Backbone, InvalidSpecsRejected) {
  EXPECT_THROW(build_backbone(make_spec(0, 2, {}, 8), 1), ConfigError);
  EXPECT_THROW(build_backbone(make_spec(1, 2, {3}, 4), 1), ConfigError);
  EXPECT_THROW(build_backbone(make_spec(2, 2, {3}, 8), 1), ConfigError);
  EXPECT_THROW(build_backbone(make_spec(3, 2, {3, 3, 3}, 12), 1), ConfigError);
  EXPECT_THROW(build_backbone(make_spec(2, 0, {3, 3}, 8), 1), ConfigError);
  EXPECT_THROW(build_backbone(make_spec(2, 2, {3, 0}, 8), 1), ConfigError);
}

TEST(Backbone, ImageShapeMismatchRejected) {
  const Backbone b = build_backbone(BackboneSpec::toy(), 1);
  EXPECT_THROW(backbone_forward(b, Tensor4(Shape{1, 3, 8, 8})), ShapeError);
}
