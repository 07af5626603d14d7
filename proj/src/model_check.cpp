#include "cbnet/model_check.hpp"

#include <random>

namespace cbnet {

CBNetGradFragment::CBNetGradFragment(CBNet& net, Tensor4 image, std::uint64_t seed)
    : net_(net), image_(std::move(image)), image_grad_(image_.size(), 0.0) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const std::size_t n = image_.shape().n;
  for (std::size_t l = 2; l <= net_.spec().stages; ++l) {
    Tensor4 r(net_.spec().level_shape(l, n));
    for (double& v : r.data()) v = dist(rng);
    projections_.push_back(std::move(r));
  }
  for (TensorView& v : net_.unique_tensors()) {
    if (v.learnable) views_.push_back(std::move(v));
  }
}

double CBNetGradFragment::loss() {
  ForwardTrace trace;
  const FeaturePyramid pyramid = net_.forward(image_, &trace);
  signature_ = net_.branch_signature(trace);
  double total = 0.0;
  for (std::size_t j = 0; j < projections_.size(); ++j) total += weighted_sum(pyramid.levels[j], projections_[j]);
  return total;
}

void CBNetGradFragment::compute_gradients() {
  net_.zero_grad();
  ForwardTrace trace;
  net_.forward(image_, &trace);
  signature_ = net_.branch_signature(trace);
  net_.backward(trace, projections_);
  if (trace.image_grad.empty()) {
    image_grad_.assign(image_.size(), 0.0);
  } else {
    image_grad_ = trace.image_grad.values();
  }
}

std::vector<GradSlot> CBNetGradFragment::slots() {
  std::vector<GradSlot> out;
  out.reserve(views_.size() + 1);
  for (const TensorView& v : views_) out.push_back({v.name, v.value, v.grad});
  out.push_back({"image", image_.data(), image_grad_});
  return out;
}

Tensor4 random_image(const BackboneSpec& spec, std::size_t batch, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor4 image(spec.image_shape(batch));
  for (double& v : image.data()) v = dist(rng);
  return image;
}

}  // namespace cbnet
