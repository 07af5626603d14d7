#pragma once

#include <cstdint>

#include "cbnet/composite.hpp"
#include "cbnet/gradcheck.hpp"

namespace cbnet {

// Whole-CBNet gradcheck fragment: loss = sum over pyramid levels of
// <x_K^l, R_l> with fixed random R_l. Covers every distinct learnable tensor
// (backbones and composite connections) plus the input image.
class CBNetGradFragment : public GradcheckFragment {
 public:
  CBNetGradFragment(CBNet& net, Tensor4 image, std::uint64_t seed);

  double loss() override;
  void compute_gradients() override;
  std::vector<GradSlot> slots() override;
  std::uint64_t branch_signature() const override { return signature_; }

 private:
  CBNet& net_;
  Tensor4 image_;
  std::vector<Tensor4> projections_;
  std::vector<double> image_grad_;
  std::vector<TensorView> views_;
  std::uint64_t signature_ = 0;
};

// Random image in [0, 1) for the net's spec.
Tensor4 random_image(const BackboneSpec& spec, std::size_t batch, std::uint64_t seed);

}  // namespace cbnet
