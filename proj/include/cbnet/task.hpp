#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbnet/composite.hpp"
#include "cbnet/weights.hpp"

namespace cbnet {

enum class ShapeClass : int { Circle = 0, Square = 1, Triangle = 2 };
inline constexpr std::size_t kClassCount = 3;
// Objectness cells are kCellSize x kCellSize pixels, i.e. the stage-2 grid.
inline constexpr std::size_t kCellSize = 4;

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct SyntheticSample {
  Tensor4 image;  // (1, 3, H, W) in [0, 1]
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<std::uint8_t> grid;  // row-major, 1 where the shape's box touches the cell
  int label = 0;
  PixelBox box;
};

// Sample i is generated from seed + i alone.
SyntheticSample gen_sample(std::uint64_t seed, std::size_t image_size);
std::vector<SyntheticSample> gen_dataset(std::uint64_t seed, std::size_t n, std::size_t image_size);

// "sample{i}.image", "sample{i}.grid", "sample{i}.label" in a CBNW container.
TensorList dataset_to_tensors(const std::vector<SyntheticSample>& samples);

// Objectness: 1x1 conv over x_K^2 to one channel. Classification: global
// average of x_K^L followed by a linear map (a 1x1 conv with bias) to 3 logits.
struct Head {
  ConvParams objectness;
  ConvParams classifier;
  std::size_t objectness_level = 2;
  std::size_t class_level = 0;
};

struct HeadOutput {
  Tensor4 objectness;  // (n, 1, gh, gw) logits
  Tensor4 logits;      // (n, 3, 1, 1)
};

struct HeadTrace {
  Tensor4 objectness_input;
  Tensor4 pooled;
  Shape class_input;
};

Head make_head(const BackboneSpec& spec, std::uint64_t seed);
HeadOutput head_forward(const Head& head, const FeaturePyramid& pyramid, HeadTrace* trace = nullptr);
// Returns per-level pyramid gradients in the layout CBNet::backward expects.
std::vector<Tensor4> head_backward(Head& head, const HeadTrace& trace, const FeaturePyramid& pyramid,
                                   const HeadOutput& grad);
std::vector<TensorView> head_tensors(Head& head);
void zero_grad(Head& head);

struct Batch {
  Tensor4 images;
  std::vector<std::uint8_t> grids;
  std::vector<int> labels;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

Batch make_batch(const std::vector<SyntheticSample>& samples, std::span<const std::size_t> indices);
Batch make_batch(const std::vector<SyntheticSample>& samples);

struct LossResult {
  double total = 0.0;
  double objectness = 0.0;      // mean binary cross-entropy over cells
  double classification = 0.0;  // mean cross-entropy over samples
  HeadOutput grad;
};

LossResult loss(const HeadOutput& pred, const Batch& batch);

struct Metrics {
  double cell_f1 = 0.0;
  double class_accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  std::size_t true_negative = 0;
};

// Cell positive iff sigmoid(logit) > 0.5; class = first arg-max logit.
Metrics score_predictions(const HeadOutput& pred, const Batch& batch);
Metrics evaluate(CBNet& net, const Head& head, const std::vector<SyntheticSample>& dataset,
                 std::size_t batch_size = 16);

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainOptions {
  std::size_t steps = 200;
  double lr = 0.05;
  std::uint64_t seed = 42;
  std::size_t batch_size = 8;
  bool evaluate_at_end = true;
};

struct TrainLog {
  std::vector<double> losses;
  Metrics final_metrics;
  // Element-level coverage of assistant backbone parameters by nonzero gradients.
  std::size_t assistant_elements = 0;
  std::size_t assistant_elements_with_gradient = 0;
  std::vector<std::string> assistant_tensors_missing_gradient;

  // Mean loss over the first / last pass through the dataset.
  double initial_loss(std::size_t steps_per_epoch) const;
  double final_loss(std::size_t steps_per_epoch) const;
};

// Backbone and connection tensors (CBNet::named_tensors) followed by "head.*".
TensorList export_model(CBNet& net, Head& head);
// A list with "b1." names is a full model and is imported by name; anything
// else is treated as a single-backbone file and copied into every backbone.
// Head tensors are taken when present.
void import_model(CBNet& net, Head& head, const TensorList& tensors);

// Plain SGD on mini-batches, batchnorm in training mode.
TrainLog train(CBNet& net, Head& head, const std::vector<SyntheticSample>& dataset,
               const TrainOptions& options);

}  // namespace cbnet
