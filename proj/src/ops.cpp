#include "cbnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace cbnet {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t c_in, k, stride, pad;
  std::size_t h, w;          // input spatial
  std::size_t h_out, w_out;  // output spatial
};

ConvGeometry geometry(const Shape& in, const ConvParams& p) {
  const Shape out = conv2d_output_shape(in, p);
  return {p.c_in(), p.kernel(), p.stride, p.pad, in.h, in.w, out.h, out.w};
}

// Unfolds one sample (c_in, h, w) into a (c_in*k*k, h_out*w_out) matrix.
void im2col(const double* src, const ConvGeometry& g, double* col) {
  const std::size_t cols = g.h_out * g.w_out;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                ix < static_cast<long>(g.w);
            row[oy * g.w_out + ox] = inside ? src[(c * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto the sample.
void col2im(const double* col, const ConvGeometry& g, double* dst) {
  const std::size_t cols = g.h_out * g.w_out;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dst[(c * g.h + iy) * g.w + ix] += row[oy * g.w_out + ox];
          }
        }
      }
    }
  }
}

void check_bn_input(const Tensor4& input, const BatchNormParams& params) {
  params.validate();
  if (input.shape().c != params.channels()) {
    throw ShapeError("batchnorm: input " + input.shape().str() + " has " +
                     std::to_string(input.shape().c) + " channels, parameters have " +
                     std::to_string(params.channels()));
  }
}

}  // namespace

void ConvParams::zero_grad() {
  weight.zero_grad();
  bias.zero_grad();
}

BatchNormParams::BatchNormParams(std::size_t channels)
    : gamma(channels, 1.0),
      beta(channels, 0.0),
      running_mean(channels, 0.0),
      running_var(channels, 1.0) {}

void BatchNormParams::zero_grad() {
  gamma.zero_grad();
  beta.zero_grad();
}

void BatchNormParams::validate() const {
  const std::size_t c = gamma.size();
  if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw ConfigError("batchnorm: parameter vectors disagree on channel count");
  }
  if (!(epsilon > 0.0)) throw ConfigError("batchnorm: epsilon must be positive");
  for (double v : running_var) {
    if (v < 0.0) throw ConfigError("batchnorm: running_var must be non-negative");
  }
}

Shape conv2d_output_shape(const Shape& in, const ConvParams& p) {
  const Shape& ws = p.weight.shape();
  if (ws.h != ws.w || ws.h == 0 || p.stride == 0) {
    throw ShapeError("conv2d: malformed weight " + ws.str());
  }
  if (in.c != ws.c) {
    throw ShapeError("conv2d: input " + in.str() + " does not match weight " + ws.str());
  }
  if (p.has_bias() && p.bias.size() != ws.n) {
    throw ShapeError("conv2d: bias length " + std::to_string(p.bias.size()) +
                     " does not match weight " + ws.str());
  }
  if (in.h + 2 * p.pad < ws.h || in.w + 2 * p.pad < ws.w) {
    throw ShapeError("conv2d: input " + in.str() + " smaller than kernel " + ws.str());
  }
  return {in.n, ws.n, (in.h + 2 * p.pad - ws.h) / p.stride + 1,
          (in.w + 2 * p.pad - ws.w) / p.stride + 1};
}

Tensor4 conv2d(const Tensor4& input, const ConvParams& params) {
  const Shape out_shape = conv2d_output_shape(input.shape(), params);
  const ConvGeometry g = geometry(input.shape(), params);
  const std::size_t rows = g.c_in * g.k * g.k;
  const std::size_t cols = g.h_out * g.w_out;
  const std::size_t c_out = params.c_out();

  Tensor4 out(out_shape);
  std::vector<double> col(rows * cols);
  ConstMatrixMap weight(params.weight.data().data(), c_out, rows);
  const std::size_t in_stride = g.c_in * g.h * g.w;
  for (std::size_t n = 0; n < out_shape.n; ++n) {
    im2col(input.data().data() + n * in_stride, g, col.data());
    MatrixMap dst(out.data().data() + n * c_out * cols, c_out, cols);
    dst.noalias() = weight * ConstMatrixMap(col.data(), rows, cols);
    if (params.has_bias()) {
      for (std::size_t o = 0; o < c_out; ++o) dst.row(o).array() += params.bias.value[o];
    }
  }
  return out;
}

Tensor4 conv2d_backward(const Tensor4& input, ConvParams& params, const Tensor4& grad_out) {
  const Shape out_shape = conv2d_output_shape(input.shape(), params);
  if (!(grad_out.shape() == out_shape)) {
    throw ShapeError("conv2d_backward: grad " + grad_out.shape().str() + " vs output " +
                     out_shape.str());
  }
  const ConvGeometry g = geometry(input.shape(), params);
  const std::size_t rows = g.c_in * g.k * g.k;
  const std::size_t cols = g.h_out * g.w_out;
  const std::size_t c_out = params.c_out();
  const std::size_t in_stride = g.c_in * g.h * g.w;

  params.weight.ensure_grad();
  if (params.has_bias() && params.bias.grad.size() != c_out) params.bias.zero_grad();

  Tensor4 grad_in(input.shape());
  std::vector<double> col(rows * cols);
  std::vector<double> dcol(rows * cols);
  ConstMatrixMap weight(params.weight.data().data(), c_out, rows);
  MatrixMap dweight(params.weight.grad().data(), c_out, rows);
  for (std::size_t n = 0; n < out_shape.n; ++n) {
    ConstMatrixMap dy(grad_out.data().data() + n * c_out * cols, c_out, cols);
    im2col(input.data().data() + n * in_stride, g, col.data());
    dweight.noalias() += dy * ConstMatrixMap(col.data(), rows, cols).transpose();
    MatrixMap(dcol.data(), rows, cols).noalias() = weight.transpose() * dy;
    col2im(dcol.data(), g, grad_in.data().data() + n * in_stride);
    if (params.has_bias()) {
      for (std::size_t o = 0; o < c_out; ++o) params.bias.grad[o] += dy.row(o).sum();
    }
  }
  return grad_in;
}

Tensor4 batchnorm(const Tensor4& input, const BatchNormParams& params, BatchNormCache* cache) {
  check_bn_input(input, params);
  const Shape& s = input.shape();
  const std::size_t plane = s.h * s.w;
  const std::size_t count = s.n * plane;

  std::vector<double> mean(s.c, 0.0);
  std::vector<double> var(s.c, 0.0);
  if (params.mode == BnMode::Training) {
    if (count == 0) throw ShapeError("batchnorm: empty batch in training mode");
    for (std::size_t c = 0; c < s.c; ++c) {
      double sum = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* p = input.data().data() + (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean[c] = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* p = input.data().data() + (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean[c]) * (p[i] - mean[c]);
      }
      var[c] = sq / static_cast<double>(count);
    }
  } else {
    mean = params.running_mean;
    var = params.running_var;
  }

  std::vector<double> inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + params.epsilon);

  Tensor4 out(s);
  Tensor4 normalized;
  if (cache) normalized = Tensor4(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * plane;
      const double g = params.gamma.value[c];
      const double b = params.beta.value[c];
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (input[base + i] - mean[c]) * inv_std[c];
        if (cache) normalized[base + i] = xhat;
        out[base + i] = g * xhat + b;
      }
    }
  }
  if (cache) {
    cache->mode = params.mode;
    cache->normalized = std::move(normalized);
    cache->mean = std::move(mean);
    cache->var = std::move(var);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor4 batchnorm_backward(const BatchNormCache& cache, BatchNormParams& params,
                           const Tensor4& grad_out) {
  require_same_shape(cache.normalized, grad_out, "batchnorm_backward");
  const Shape& s = grad_out.shape();
  const std::size_t plane = s.h * s.w;
  const double count = static_cast<double>(s.n * plane);
  if (params.gamma.grad.size() != s.c) params.gamma.zero_grad();
  if (params.beta.grad.size() != s.c) params.beta.zero_grad();

  Tensor4 grad_in(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += grad_out[base + i];
        sum_dy_xhat += grad_out[base + i] * cache.normalized[base + i];
      }
    }
    params.gamma.grad[c] += sum_dy_xhat;
    params.beta.grad[c] += sum_dy;

    const double g = params.gamma.value[c];
    const double scale = g * cache.inv_std[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (cache.mode == BnMode::Training) {
          grad_in[base + i] = scale * (grad_out[base + i] - sum_dy / count -
                                       cache.normalized[base + i] * sum_dy_xhat / count);
        } else {
          grad_in[base + i] = scale * grad_out[base + i];
        }
      }
    }
  }
  return grad_in;
}

void update_running_stats(BatchNormParams& params, const BatchNormCache& cache) {
  if (cache.mode != BnMode::Training) return;
  if (cache.mean.size() != params.channels()) {
    throw ShapeError("update_running_stats: cache does not match parameters");
  }
  for (std::size_t c = 0; c < params.channels(); ++c) {
    params.running_mean[c] = kBnMomentum * params.running_mean[c] + (1.0 - kBnMomentum) * cache.mean[c];
    params.running_var[c] = kBnMomentum * params.running_var[c] + (1.0 - kBnMomentum) * cache.var[c];
  }
}

Tensor4 relu(const Tensor4& input) {
  Tensor4 out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

Tensor4 relu_backward(const Tensor4& output, const Tensor4& grad_out) {
  require_same_shape(output, grad_out, "relu_backward");
  Tensor4 grad_in(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) grad_in[i] = output[i] > 0.0 ? grad_out[i] : 0.0;
  return grad_in;
}

Tensor4 add(const Tensor4& a, const Tensor4& b) {
  require_same_shape(a, b, "add");
  Tensor4 out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor4 maxpool2(const Tensor4& input, std::vector<std::size_t>* argmax) {
  const Shape& s = input.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("maxpool2: spatial dims must be even, got " + s.str());
  }
  Tensor4 out({s.n, s.c, s.h / 2, s.w / 2});
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; y += 2) {
        for (std::size_t x = 0; x < s.w; x += 2, ++o) {
          std::size_t best = input.index(n, c, y, x);
          const std::size_t window[3] = {input.index(n, c, y, x + 1), input.index(n, c, y + 1, x),
                                         input.index(n, c, y + 1, x + 1)};
          for (std::size_t idx : window) {
            if (input[idx] > input[best]) best = idx;
          }
          out[o] = input[best];
          if (argmax) (*argmax)[o] = best;
        }
      }
    }
  }
  return out;
}

Tensor4 maxpool2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor4& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("maxpool2_backward: argmax does not match grad " + grad_out.shape().str());
  }
  Tensor4 grad_in(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) grad_in[argmax[o]] += grad_out[o];
  return grad_in;
}

Tensor4 upsample_nearest(const Tensor4& input, std::size_t target_h, std::size_t target_w) {
  const Shape& s = input.shape();
  if (s.h == 0 || s.w == 0 || target_h % s.h != 0 || target_w % s.w != 0 || target_h < s.h ||
      target_w < s.w) {
    throw ShapeError("upsample_nearest: " + s.str() + " cannot be resized to " +
                     std::to_string(target_h) + "x" + std::to_string(target_w) +
                     " by an integer factor");
  }
  const std::size_t fy = target_h / s.h;
  const std::size_t fx = target_w / s.w;
  Tensor4 out({s.n, s.c, target_h, target_w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < target_h; ++y) {
        for (std::size_t x = 0; x < target_w; ++x) {
          out.at(n, c, y, x) = input.at(n, c, y / fy, x / fx);
        }
      }
    }
  }
  return out;
}

Tensor4 upsample_nearest_backward(const Tensor4& grad_out, const Shape& input_shape) {
  const Shape& s = grad_out.shape();
  if (s.n != input_shape.n || s.c != input_shape.c || input_shape.h == 0 || input_shape.w == 0 ||
      s.h % input_shape.h != 0 || s.w % input_shape.w != 0) {
    throw ShapeError("upsample_nearest_backward: grad " + s.str() + " is not an integer resize of " +
                     input_shape.str());
  }
  const std::size_t fy = s.h / input_shape.h;
  const std::size_t fx = s.w / input_shape.w;
  Tensor4 grad_in(input_shape);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
          grad_in.at(n, c, y / fy, x / fx) += grad_out.at(n, c, y, x);
        }
      }
    }
  }
  return grad_in;
}

}  // namespace cbnet
