#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbnet {

// CBNW container, all integers little-endian:
//   "CBNW" | u32 version (1) | u32 count |
//   count x { u16 name_len | name | u8 ndim | ndim x u32 dims | f64 payload }
inline constexpr std::uint32_t kWeightFormatVersion = 1;

class WeightFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

using TensorList = std::vector<NamedTensor>;

std::vector<std::uint8_t> encode_weights(const TensorList& tensors);
TensorList decode_weights(std::span<const std::uint8_t> bytes);

void save_weights(const TensorList& tensors, const std::filesystem::path& path);
TensorList load_weights(const std::filesystem::path& path);

const NamedTensor* find_tensor(const TensorList& tensors, const std::string& name);

// A live view onto model storage under a hierarchical name. Buffers such as
// batchnorm running statistics are serialized but are not learnable.
struct TensorView {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::span<double> value;
  std::span<double> grad;
  bool learnable = true;
};

TensorList export_tensors(std::span<const TensorView> views);
// Copies every view's values from the list by name. Missing names or dim
// mismatches throw WeightFormatError; extra names in the list are ignored.
void import_tensors(std::span<const TensorView> views, const TensorList& tensors);

}  // namespace cbnet
