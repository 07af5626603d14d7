#pragma once

#include <cstddef>
#include <vector>

#include "cbnet/tensor.hpp"

namespace cbnet {

// Convolution parameters. weight has dims (c_out, c_in, k, k). An empty bias
// means the layer has none, which is the usual choice when a batchnorm follows.
struct ConvParams {
  Tensor4 weight;
  ParamVector bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t c_out() const { return weight.shape().n; }
  std::size_t c_in() const { return weight.shape().c; }
  std::size_t kernel() const { return weight.shape().h; }
  bool has_bias() const { return !bias.empty(); }
  std::size_t param_count() const { return weight.size() + bias.size(); }
  void zero_grad();
};

enum class BnMode { Training, Inference };

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.9;

struct BatchNormParams {
  ParamVector gamma;
  ParamVector beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double epsilon = kBnEpsilon;
  BnMode mode = BnMode::Training;

  BatchNormParams() = default;
  explicit BatchNormParams(std::size_t channels);

  std::size_t channels() const { return gamma.size(); }
  std::size_t param_count() const { return gamma.size() + beta.size(); }
  void zero_grad();
  void validate() const;
};

// Values a batchnorm forward hands to its backward and to the running-stat
// update. mean/var are the statistics actually used for normalization.
struct BatchNormCache {
  BnMode mode = BnMode::Training;
  Tensor4 normalized;
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> inv_std;
};

Shape conv2d_output_shape(const Shape& input, const ConvParams& params);
Tensor4 conv2d(const Tensor4& input, const ConvParams& params);
// Accumulates weight and bias gradients into params; returns the input gradient.
Tensor4 conv2d_backward(const Tensor4& input, ConvParams& params, const Tensor4& grad_out);

// Pure with respect to params: running statistics are not touched here, see
// update_running_stats.
Tensor4 batchnorm(const Tensor4& input, const BatchNormParams& params,
                  BatchNormCache* cache = nullptr);
Tensor4 batchnorm_backward(const BatchNormCache& cache, BatchNormParams& params,
                           const Tensor4& grad_out);
// running <- momentum * running + (1 - momentum) * batch, for training-mode caches.
void update_running_stats(BatchNormParams& params, const BatchNormCache& cache);

Tensor4 relu(const Tensor4& input);
// Takes the forward output; gradient passes where it is strictly positive.
Tensor4 relu_backward(const Tensor4& output, const Tensor4& grad_out);

Tensor4 add(const Tensor4& a, const Tensor4& b);

// 2x2 window, stride 2. argmax receives the flat input index of each window's
// first maximal element.
Tensor4 maxpool2(const Tensor4& input, std::vector<std::size_t>* argmax = nullptr);
Tensor4 maxpool2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor4& grad_out);

Tensor4 upsample_nearest(const Tensor4& input, std::size_t target_h, std::size_t target_w);
Tensor4 upsample_nearest_backward(const Tensor4& grad_out, const Shape& input_shape);

}  // namespace cbnet
