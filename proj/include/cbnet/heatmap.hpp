#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cbnet/tensor.hpp"

namespace cbnet {

struct Heatmap {
  std::string level_name;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> mean;          // channel mean, row-major
  std::vector<std::uint8_t> pixels;  // min-max scaled to 0..255; all zero if flat
};

// Averages a single-sample feature map over channels and rescales it.
Heatmap heatmap_channel_mean(const Tensor4& feature, const std::string& level_name);

// Binary PGM: "P5\n<w> <h>\n255\n" followed by the row-major bytes.
std::vector<std::uint8_t> encode_pgm(const Heatmap& map);
void write_pgm(const Heatmap& map, const std::filesystem::path& path);

}  // namespace cbnet
