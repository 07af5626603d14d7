#pragma once

#include <cstdint>

#include "cbnet/composite.hpp"

namespace cbnet {

// Operation counts: conv = 2 * c_in * k^2 * c_out * h_out * w_out;
// batchnorm, relu and add = element count; upsample = output element count.
struct FlopBreakdown {
  std::uint64_t conv = 0;
  std::uint64_t batchnorm = 0;
  std::uint64_t relu = 0;
  std::uint64_t add = 0;
  std::uint64_t upsample = 0;

  std::uint64_t total() const { return conv + batchnorm + relu + add + upsample; }
};

// Learnable parameters (conv weights/biases, batchnorm gamma/beta); shared
// storage is counted once and running statistics are not counted.
std::uint64_t param_count(const Backbone& backbone);
std::uint64_t param_count(const CBNet& net);
std::uint64_t composite_param_count(const CBNet& net);

FlopBreakdown flop_breakdown(const Backbone& backbone, const Shape& image);
FlopBreakdown flop_breakdown(const CBNet& net, const Shape& image);
std::uint64_t flop_count(const Backbone& backbone, const Shape& image);
std::uint64_t flop_count(const CBNet& net, const Shape& image);

}  // namespace cbnet
