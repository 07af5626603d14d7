#include "cbnet/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cbnet {

Heatmap heatmap_channel_mean(const Tensor4& feature, const std::string& level_name) {
  const Shape& s = feature.shape();
  if (s.n != 1) throw ShapeError("heatmap: expected a single sample, got " + s.str());
  if (s.c == 0) throw ShapeError("heatmap: feature has no channels");

  Heatmap map;
  map.level_name = level_name;
  map.height = s.h;
  map.width = s.w;
  map.mean.assign(s.h * s.w, 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t i = 0; i < s.h * s.w; ++i) map.mean[i] += feature[c * s.h * s.w + i];
  }
  for (double& v : map.mean) v /= static_cast<double>(s.c);

  map.pixels.assign(map.mean.size(), 0);
  if (map.mean.empty()) return map;
  const auto [lo, hi] = std::minmax_element(map.mean.begin(), map.mean.end());
  const double min = *lo;
  const double range = *hi - *lo;
  if (!(range > 0.0)) return map;
  for (std::size_t i = 0; i < map.mean.size(); ++i) {
    const double scaled = std::round((map.mean[i] - min) / range * 255.0);
    map.pixels[i] = static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
  }
  return map;
}

std::vector<std::uint8_t> encode_pgm(const Heatmap& map) {
  const std::string header =
      "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), map.pixels.begin(), map.pixels.end());
  return out;
}

void write_pgm(const Heatmap& map, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_pgm(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace cbnet
