#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cbnet/tensor.hpp"

namespace cbnet {

// One differentiable buffer: the values gradcheck perturbs and the analytic
// gradient the fragment computed for them.
struct GradSlot {
  std::string name;
  std::span<double> value;
  std::span<const double> grad;
};

// A scalar-valued network fragment under test. loss() must be a pure function
// of the slot values.
class GradcheckFragment {
 public:
  virtual ~GradcheckFragment() = default;

  virtual double loss() = 0;
  // Runs forward + backward at the current values and fills every slot's grad.
  virtual void compute_gradients() = 0;
  virtual std::vector<GradSlot> slots() = 0;
  // Fingerprint of the piecewise branch choices (relu masks, pooling argmax)
  // taken by the most recent loss() call. Fragments without kinks return 0.
  virtual std::uint64_t branch_signature() const { return 0; }
};

struct GradcheckOptions {
  double epsilon = 1e-5;
  // Lower bound on the relative-error denominator so gradients that are zero
  // up to rounding are compared absolutely.
  double denominator_floor = 1e-6;
};

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::string worst_slot;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  // Coordinates whose central stencil crossed a relu/pool kink and were
  // checked with a one-sided second-order stencil instead.
  std::size_t one_sided = 0;
  // Coordinates with a kink on both sides of the stencil; not comparable.
  std::size_t skipped = 0;
  bool finite = true;
  std::string failure;

  bool passed(double tolerance) const { return finite && max_relative_error < tolerance; }
};

double relative_error(double analytic, double numeric, double floor);

// Compares every analytic gradient of the fragment with central differences.
// A non-finite loss is reported through finite/failure rather than thrown.
GradcheckReport gradcheck(GradcheckFragment& fragment, const GradcheckOptions& options = {});

// Fragment assembled from callables, handy for single primitives.
class LambdaFragment : public GradcheckFragment {
 public:
  std::function<double()> loss_fn;
  std::function<void()> gradient_fn;
  std::function<std::vector<GradSlot>()> slots_fn;
  std::function<std::uint64_t()> signature_fn;

  double loss() override { return loss_fn(); }
  void compute_gradients() override { gradient_fn(); }
  std::vector<GradSlot> slots() override { return slots_fn ? slots_fn() : std::vector<GradSlot>{}; }
  std::uint64_t branch_signature() const override { return signature_fn ? signature_fn() : 0; }
};

// Scalar objective sum(output * weights), used to reduce a tensor output to a
// loss with a non-trivial upstream gradient (which is weights itself).
double weighted_sum(const Tensor4& output, const Tensor4& weights);

// Folds the sign pattern of a tensor (> 0 or not) into an FNV-1a hash.
std::uint64_t fold_sign_pattern(std::uint64_t hash, std::span<const double> values);
std::uint64_t fold_indices(std::uint64_t hash, std::span<const std::size_t> indices);
inline constexpr std::uint64_t kSignatureSeed = 14695981039346656037ull;

}  // namespace cbnet
