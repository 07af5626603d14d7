#include "cbnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cbnet {
namespace {

constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t fnv_byte(std::uint64_t hash, std::uint8_t byte) {
  return (hash ^ byte) * kFnvPrime;
}

struct Probe {
  double loss;
  std::uint64_t signature;
};

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradcheckReport gradcheck(GradcheckFragment& fragment, const GradcheckOptions& options) {
  GradcheckReport report;
  const double h = options.epsilon;

  fragment.compute_gradients();
  std::vector<GradSlot> slots = fragment.slots();
  // The fragment may reuse its grad buffers, so snapshot them first.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(slots.size());
  for (const GradSlot& s : slots) analytic.emplace_back(s.grad.begin(), s.grad.end());

  auto probe = [&]() { const double l = fragment.loss(); return Probe{l, fragment.branch_signature()}; };
  auto fail = [&](const std::string& what) {
    report.finite = false;
    report.failure = what;
    report.max_relative_error = std::numeric_limits<double>::infinity();
    return report;
  };

  const Probe base = probe();
  if (!std::isfinite(base.loss)) return fail("non-finite loss at the base point");

  for (std::size_t s = 0; s < slots.size(); ++s) {
    GradSlot& slot = slots[s];
    if (analytic[s].size() != slot.value.size()) {
      return fail("slot " + slot.name + " has a gradient of the wrong length");
    }
    for (std::size_t i = 0; i < slot.value.size(); ++i) {
      const double original = slot.value[i];
      slot.value[i] = original + h;
      const Probe plus = probe();
      slot.value[i] = original - h;
      const Probe minus = probe();

      double numeric = 0.0;
      bool compared = true;
      if (plus.signature == base.signature && minus.signature == base.signature) {
        numeric = (plus.loss - minus.loss) / (2.0 * h);
      } else if (plus.signature == base.signature) {
        slot.value[i] = original + 2.0 * h;
        const Probe plus2 = probe();
        compared = plus2.signature == base.signature;
        numeric = (-3.0 * base.loss + 4.0 * plus.loss - plus2.loss) / (2.0 * h);
        ++report.one_sided;
      } else if (minus.signature == base.signature) {
        slot.value[i] = original - 2.0 * h;
        const Probe minus2 = probe();
        compared = minus2.signature == base.signature;
        numeric = (3.0 * base.loss - 4.0 * minus.loss + minus2.loss) / (2.0 * h);
        ++report.one_sided;
      } else {
        compared = false;
      }
      slot.value[i] = original;

      if (!std::isfinite(plus.loss) || !std::isfinite(minus.loss) || !std::isfinite(numeric)) {
        return fail("non-finite loss while perturbing " + slot.name + "[" + std::to_string(i) + "]");
      }
      if (!compared) {
        ++report.skipped;
        continue;
      }
      ++report.checked;
      const double err = relative_error(analytic[s][i], numeric, options.denominator_floor);
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_slot = slot.name;
        report.worst_index = i;
        report.worst_analytic = analytic[s][i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

double weighted_sum(const Tensor4& output, const Tensor4& weights) {
  require_same_shape(output, weights, "weighted_sum");
  double total = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) total += output[i] * weights[i];
  return total;
}

std::uint64_t fold_sign_pattern(std::uint64_t hash, std::span<const double> values) {
  std::uint8_t byte = 0;
  std::size_t bits = 0;
  for (double v : values) {
    byte = static_cast<std::uint8_t>((byte << 1) | (v > 0.0 ? 1 : 0));
    if (++bits == 8) {
      hash = fnv_byte(hash, byte);
      byte = 0;
      bits = 0;
    }
  }
  if (bits) hash = fnv_byte(hash, byte);
  return fnv_byte(hash, static_cast<std::uint8_t>(values.size() & 0xff));
}

std::uint64_t fold_indices(std::uint64_t hash, std::span<const std::size_t> indices) {
  for (std::size_t idx : indices) {
    for (int b = 0; b < 8; ++b) hash = fnv_byte(hash, static_cast<std::uint8_t>(idx >> (8 * b)));
  }
  return hash;
}

}  // namespace cbnet
