#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbnet {

// Raised when two tensors (or a tensor and a parameter) disagree on shape.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised for invalid hyperparameters or model configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense (n, c, h, w) array of doubles, row-major, with an optional gradient
// buffer of the same length.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape shape, double fill = 0.0);
  Tensor4(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  bool has_grad() const { return grad_.size() == data_.size() && !grad_.empty(); }
  void ensure_grad();
  void zero_grad();
  void drop_grad() { grad_.clear(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  bool all_finite() const;

  // Adds other into this tensor elementwise.
  void accumulate(const Tensor4& other);

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

// A learnable 1-D parameter (bias, gamma, beta) with its gradient.
struct ParamVector {
  std::vector<double> value;
  std::vector<double> grad;

  ParamVector() = default;
  explicit ParamVector(std::size_t len, double fill = 0.0) : value(len, fill), grad(len, 0.0) {}

  std::size_t size() const { return value.size(); }
  bool empty() const { return value.empty(); }
  void zero_grad() { grad.assign(value.size(), 0.0); }
};

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what);

}  // namespace cbnet
