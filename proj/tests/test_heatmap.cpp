#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "cbnet/composite.hpp"
#include "cbnet/heatmap.hpp"
#include "cbnet/model_check.hpp"

using namespace cbnet;

TEST(Heatmap, HandComputedChannelMean) {
  const Tensor4 feature(Shape{1, 2, 2, 2}, {1, 2, 3, 4, 3, 2, 1, 0});
  const Heatmap map = heatmap_channel_mean(feature, "x");
  EXPECT_EQ(map.mean, (std::vector<double>{2, 2, 2, 2}));
  EXPECT_EQ(map.pixels, (std::vector<std::uint8_t>{0, 0, 0, 0}));
}

TEST(Heatmap, MinMaxScaling) {
  const Tensor4 feature(Shape{1, 2, 1, 3}, {0, 1, 2, 2, 3, 4});
  const Heatmap map = heatmap_channel_mean(feature, "x");
  EXPECT_EQ(map.mean, (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(map.pixels, (std::vector<std::uint8_t>{0, 128, 255}));
}

TEST(Heatmap, ConstantFeatureIsAllZero) {
  const Heatmap map = heatmap_channel_mean(Tensor4(Shape{1, 5, 3, 4}, 2.5), "x");
  EXPECT_EQ(map.height, 3u);
  EXPECT_EQ(map.width, 4u);
  EXPECT_EQ(map.pixels, std::vector<std::uint8_t>(12, 0));
}

TEST(Heatmap, RejectsBatchedFeatures) {
  EXPECT_THROW(heatmap_channel_mean(Tensor4(Shape{2, 1, 2, 2}), "x"), ShapeError);
}

TEST(Heatmap, PgmLayout) {
  const Heatmap map = heatmap_channel_mean(Tensor4(Shape{1, 1, 2, 3}, {0, 1, 2, 3, 4, 5}), "x");
  const std::vector<std::uint8_t> bytes = encode_pgm(map);
  const std::string header = "P5\n3 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 6);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  EXPECT_EQ(bytes.back(), 255);
  EXPECT_EQ(bytes[header.size()], 0);
}

TEST(Heatmap, DimensionsFollowPyramidLevels) {
  CBNetConfig cfg;
  const CBNet net = build_cbnet(cfg, 1);
  const FeaturePyramid p = net.forward(random_image(cfg.spec, 1, 2));
  const Heatmap level2 = heatmap_channel_mean(p.level(2), "level2");
  const Heatmap level5 = heatmap_channel_mean(p.level(5), "level5");
  EXPECT_EQ(level2.height, 16u);
  EXPECT_EQ(level2.width, 16u);
  EXPECT_EQ(level5.height, 2u);
  EXPECT_EQ(level5.width, 2u);
  const auto path = std::filesystem::temp_directory_path() / "cbnet_test_level5.pgm";
  write_pgm(level5, path);
  std::ifstream in(path, std::ios::binary);
  const std::vector<char> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::vector<std::uint8_t> expected = encode_pgm(level5);
  EXPECT_EQ(std::vector<std::uint8_t>(file.begin(), file.end()), expected);
  std::filesystem::remove(path);
}
