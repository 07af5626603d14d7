#include "cbnet/task.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

namespace cbnet {
namespace {

constexpr std::uint64_t kHeadSeedSalt = 0xc2b2ae3d27d4eb4full;

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

void rasterize(SyntheticSample& s, ShapeClass cls, const std::array<double, 3>& color) {
  const PixelBox& b = s.box;
  const double size = static_cast<double>(b.x1 - b.x0);
  const double cx = static_cast<double>(b.x0) + size / 2.0;
  const double cy = static_cast<double>(b.y0) + size / 2.0;
  for (std::size_t y = b.y0; y < b.y1; ++y) {
    for (std::size_t x = b.x0; x < b.x1; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      bool inside = false;
      switch (cls) {
        case ShapeClass::Square:
          inside = true;
          break;
        case ShapeClass::Circle:
          inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= (size / 2.0) * (size / 2.0);
          break;
        case ShapeClass::Triangle: {
          // Apex at the top centre, base along the bottom edge.
          const double depth = (py - static_cast<double>(b.y0)) / size;
          inside = std::abs(px - cx) <= depth * size / 2.0;
          break;
        }
      }
      if (!inside) continue;
      for (std::size_t c = 0; c < 3; ++c) s.image.at(0, c, y, x) = color[c];
    }
  }
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0, correct = 0, samples = 0;

  void add(const HeadOutput& pred, const Batch& batch) {
    const std::size_t n = batch.labels.size();
    const std::size_t cells = batch.grid_h * batch.grid_w;
    if (pred.objectness.size() != n * cells || pred.logits.size() != n * kClassCount) {
      throw ShapeError("score_predictions: predictions " + pred.objectness.shape().str() + " / " +
                       pred.logits.shape().str() + " do not match batch of " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n * cells; ++i) {
      const bool predicted = sigmoid(pred.objectness[i]) > 0.5;
      const bool truth = batch.grids[i] != 0;
      tp += predicted && truth;
      fp += predicted && !truth;
      fn += !predicted && truth;
      tn += !predicted && !truth;
    }
    for (std::size_t s = 0; s < n; ++s) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < kClassCount; ++j) {
        if (pred.logits[s * kClassCount + j] > pred.logits[s * kClassCount + best]) best = j;
      }
      correct += static_cast<int>(best) == batch.labels[s];
    }
    samples += n;
  }

  Metrics metrics() const {
    Metrics m;
    m.true_positive = tp;
    m.false_positive = fp;
    m.false_negative = fn;
    m.true_negative = tn;
    const std::size_t f1_denom = 2 * tp + fp + fn;
    m.cell_f1 = f1_denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(f1_denom);
    m.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.class_accuracy = samples == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(samples);
    return m;
  }
};

void sgd_update(std::vector<TensorView> views, double lr) {
  for (TensorView& v : views) {
    if (!v.learnable) continue;
    for (std::size_t i = 0; i < v.value.size(); ++i) v.value[i] -= lr * v.grad[i];
  }
}

}  // namespace

SyntheticSample gen_sample(std::uint64_t seed, std::size_t image_size) {
  if (image_size == 0 || image_size % kCellSize != 0) {
    throw ConfigError("gen_dataset: image size " + std::to_string(image_size) + " is not divisible by 4");
  }
  if (image_size < 8) throw ConfigError("gen_dataset: image size must be at least 8");
  Rng rng(seed);
  SyntheticSample s;
  s.image = Tensor4({1, 3, image_size, image_size});
  std::uniform_real_distribution<double> noise(0.0, 0.35);
  for (double& v : s.image.data()) v = noise(rng);

  s.label = std::uniform_int_distribution<int>(0, 2)(rng);
  const std::size_t min_size = std::max<std::size_t>(4, image_size / 5);
  const std::size_t max_size = std::max(min_size, image_size * 2 / 5);
  const std::size_t size = std::uniform_int_distribution<std::size_t>(min_size, max_size)(rng);
  std::uniform_int_distribution<std::size_t> pos(0, image_size - size);
  s.box.x0 = pos(rng);
  s.box.y0 = pos(rng);
  s.box.x1 = s.box.x0 + size;
  s.box.y1 = s.box.y0 + size;
  std::uniform_real_distribution<double> bright(0.55, 1.0);
  const std::array<double, 3> color{bright(rng), bright(rng), bright(rng)};
  rasterize(s, static_cast<ShapeClass>(s.label), color);

  s.grid_h = image_size / kCellSize;
  s.grid_w = image_size / kCellSize;
  s.grid.assign(s.grid_h * s.grid_w, 0);
  for (std::size_t gy = 0; gy < s.grid_h; ++gy) {
    for (std::size_t gx = 0; gx < s.grid_w; ++gx) {
      const bool overlap_x = s.box.x0 < (gx + 1) * kCellSize && s.box.x1 > gx * kCellSize;
      const bool overlap_y = s.box.y0 < (gy + 1) * kCellSize && s.box.y1 > gy * kCellSize;
      s.grid[gy * s.grid_w + gx] = overlap_x && overlap_y;
    }
  }
  return s;
}

std::vector<SyntheticSample> gen_dataset(std::uint64_t seed, std::size_t n, std::size_t image_size) {
  if (n < 1) throw ConfigError("gen_dataset: need at least one sample");
  std::vector<SyntheticSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen_sample(seed + i, image_size));
  return out;
}

TensorList dataset_to_tensors(const std::vector<SyntheticSample>& samples) {
  TensorList out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SyntheticSample& s = samples[i];
    const std::string base = "sample" + std::to_string(i);
    const Shape& is = s.image.shape();
    out.push_back({base + ".image",
                   {static_cast<std::uint32_t>(is.n), static_cast<std::uint32_t>(is.c),
                    static_cast<std::uint32_t>(is.h), static_cast<std::uint32_t>(is.w)},
                   s.image.values()});
    out.push_back({base + ".grid",
                   {static_cast<std::uint32_t>(s.grid_h), static_cast<std::uint32_t>(s.grid_w)},
                   std::vector<double>(s.grid.begin(), s.grid.end())});
    out.push_back({base + ".label", {1}, {static_cast<double>(s.label)}});
  }
  return out;
}

Head make_head(const BackboneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed ^ kHeadSeedSalt);
  Head head;
  head.objectness_level = 2;
  head.class_level = spec.stages;
  head.objectness = make_conv(spec.channels(2), 1, 1, 1, 0, true, rng);
  head.classifier = make_conv(spec.channels(spec.stages), kClassCount, 1, 1, 0, true, rng);
  return head;
}

HeadOutput head_forward(const Head& head, const FeaturePyramid& pyramid, HeadTrace* trace) {
  const Tensor4& fine = pyramid.level(head.objectness_level);
  const Tensor4& top = pyramid.level(head.class_level);
  const Shape& ts = top.shape();
  Tensor4 pooled({ts.n, ts.c, 1, 1});
  const double plane = static_cast<double>(ts.h * ts.w);
  for (std::size_t n = 0; n < ts.n; ++n) {
    for (std::size_t c = 0; c < ts.c; ++c) {
      double sum = 0.0;
      for (std::size_t y = 0; y < ts.h; ++y) {
        for (std::size_t x = 0; x < ts.w; ++x) sum += top.at(n, c, y, x);
      }
      pooled.at(n, c, 0, 0) = sum / plane;
    }
  }
  HeadOutput out{conv2d(fine, head.objectness), conv2d(pooled, head.classifier)};
  if (trace) {
    trace->objectness_input = fine;
    trace->pooled = std::move(pooled);
    trace->class_input = ts;
  }
  return out;
}

std::vector<Tensor4> head_backward(Head& head, const HeadTrace& trace, const FeaturePyramid& pyramid,
                                   const HeadOutput& grad) {
  std::vector<Tensor4> level_grads(pyramid.levels.size());
  Tensor4& fine = level_grads.at(head.objectness_level - pyramid.first_level);
  fine = conv2d_backward(trace.objectness_input, head.objectness, grad.objectness);

  const Tensor4 grad_pooled = conv2d_backward(trace.pooled, head.classifier, grad.logits);
  const Shape& ts = trace.class_input;
  Tensor4 grad_top(ts);
  const double plane = static_cast<double>(ts.h * ts.w);
  for (std::size_t n = 0; n < ts.n; ++n) {
    for (std::size_t c = 0; c < ts.c; ++c) {
      const double g = grad_pooled.at(n, c, 0, 0) / plane;
      for (std::size_t y = 0; y < ts.h; ++y) {
        for (std::size_t x = 0; x < ts.w; ++x) grad_top.at(n, c, y, x) = g;
      }
    }
  }
  Tensor4& top = level_grads.at(head.class_level - pyramid.first_level);
  if (top.empty()) {
    top = std::move(grad_top);
  } else {
    top.accumulate(grad_top);
  }
  return level_grads;
}

std::vector<TensorView> head_tensors(Head& head) {
  std::vector<TensorView> out;
  append_views(head.objectness, "head.objectness", out);
  append_views(head.classifier, "head.classifier", out);
  return out;
}

void zero_grad(Head& head) {
  head.objectness.zero_grad();
  head.classifier.zero_grad();
}

Batch make_batch(const std::vector<SyntheticSample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("make_batch: empty batch");
  const SyntheticSample& first = samples.at(indices[0]);
  const Shape is = first.image.shape();
  Batch b;
  b.grid_h = first.grid_h;
  b.grid_w = first.grid_w;
  b.images = Tensor4({indices.size(), is.c, is.h, is.w});
  const std::size_t stride = is.c * is.h * is.w;
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const SyntheticSample& s = samples.at(indices[j]);
    if (!(s.image.shape() == is) || s.grid_h != b.grid_h || s.grid_w != b.grid_w) {
      throw ShapeError("make_batch: samples disagree on dimensions");
    }
    std::copy(s.image.data().begin(), s.image.data().end(), b.images.data().begin() + j * stride);
    b.grids.insert(b.grids.end(), s.grid.begin(), s.grid.end());
    b.labels.push_back(s.label);
  }
  return b;
}

Batch make_batch(const std::vector<SyntheticSample>& samples) {
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  return make_batch(samples, all);
}

LossResult loss(const HeadOutput& pred, const Batch& batch) {
  const std::size_t n = batch.labels.size();
  const Shape expected_obj{n, 1, batch.grid_h, batch.grid_w};
  if (!(pred.objectness.shape() == expected_obj) || !(pred.logits.shape() == Shape{n, kClassCount, 1, 1})) {
    throw ShapeError("loss: predictions " + pred.objectness.shape().str() + " / " +
                     pred.logits.shape().str() + " do not match batch grid " + expected_obj.str());
  }
  LossResult r;
  r.grad.objectness = Tensor4(pred.objectness.shape());
  r.grad.logits = Tensor4(pred.logits.shape());

  const double cells = static_cast<double>(pred.objectness.size());
  double bce = 0.0;
  for (std::size_t i = 0; i < pred.objectness.size(); ++i) {
    const double z = pred.objectness[i];
    const double y = batch.grids[i] ? 1.0 : 0.0;
    bce += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    r.grad.objectness[i] = (sigmoid(z) - y) / cells;
  }
  r.objectness = bce / cells;

  double ce = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double* z = pred.logits.data().data() + s * kClassCount;
    const double zmax = *std::max_element(z, z + kClassCount);
    double sum = 0.0;
    for (std::size_t j = 0; j < kClassCount; ++j) sum += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(sum);
    const auto label = static_cast<std::size_t>(batch.labels[s]);
    ce += lse - z[label];
    for (std::size_t j = 0; j < kClassCount; ++j) {
      const double p = std::exp(z[j] - lse);
      r.grad.logits[s * kClassCount + j] = (p - (j == label ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  r.classification = ce / static_cast<double>(n);
  r.total = r.objectness + r.classification;
  return r;
}

Metrics score_predictions(const HeadOutput& pred, const Batch& batch) {
  Counts c;
  c.add(pred, batch);
  return c.metrics();
}

Metrics evaluate(CBNet& net, const Head& head, const std::vector<SyntheticSample>& dataset,
                 std::size_t batch_size) {
  if (dataset.empty()) throw ConfigError("evaluate: empty dataset");
  if (batch_size == 0) batch_size = 1;
  net.set_bn_mode(BnMode::Inference);
  Counts counts;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(dataset.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch batch = make_batch(dataset, idx);
    counts.add(head_forward(head, net.forward(batch.images)), batch);
  }
  return counts.metrics();
}

double TrainLog::initial_loss(std::size_t steps_per_epoch) const {
  const std::size_t n = std::min(std::max<std::size_t>(steps_per_epoch, 1), losses.size());
  if (n == 0) return 0.0;
  return std::accumulate(losses.begin(), losses.begin() + static_cast<long>(n), 0.0) / static_cast<double>(n);
}

double TrainLog::final_loss(std::size_t steps_per_epoch) const {
  const std::size_t n = std::min(std::max<std::size_t>(steps_per_epoch, 1), losses.size());
  if (n == 0) return 0.0;
  return std::accumulate(losses.end() - static_cast<long>(n), losses.end(), 0.0) / static_cast<double>(n);
}

TrainLog train(CBNet& net, Head& head, const std::vector<SyntheticSample>& dataset,
               const TrainOptions& options) {
  if (!(options.lr >= 0.0)) throw ConfigError("train: lr must be non-negative");
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  const std::size_t batch_size = std::max<std::size_t>(1, std::min(options.batch_size, dataset.size()));

  TrainLog log;
  log.losses.reserve(options.steps);

  // Assistant coverage bookkeeping, element by element.
  std::vector<std::vector<TensorView>> assistant_views;
  for (std::size_t k = 1; k < net.backbone_count(); ++k) {
    std::vector<TensorView> learnable;
    for (TensorView& v : backbone_tensors(*net.backbone(k).params, "b" + std::to_string(k) + ".")) {
      if (v.learnable) learnable.push_back(std::move(v));
    }
    assistant_views.push_back(std::move(learnable));
  }
  std::vector<std::vector<std::vector<bool>>> touched;
  for (const auto& views : assistant_views) {
    auto& per_backbone = touched.emplace_back();
    for (const TensorView& v : views) per_backbone.emplace_back(v.value.size(), false);
  }

  Rng rng(options.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  for (std::size_t step = 0; step < options.steps; ++step) {
    if (cursor >= order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t take = std::min(batch_size, order.size() - cursor);
    const Batch batch = make_batch(dataset, std::span<const std::size_t>(order).subspan(cursor, take));
    cursor += take;

    net.set_bn_mode(BnMode::Training);
    net.zero_grad();
    zero_grad(head);
    ForwardTrace trace;
    const FeaturePyramid pyramid = net.forward(batch.images, &trace);
    HeadTrace head_trace;
    const HeadOutput out = head_forward(head, pyramid, &head_trace);
    const LossResult result = loss(out, batch);
    if (!std::isfinite(result.total)) throw TrainingError(step, "non-finite loss");
    log.losses.push_back(result.total);

    net.backward(trace, head_backward(head, head_trace, pyramid, result.grad));

    for (std::size_t a = 0; a < assistant_views.size(); ++a) {
      for (std::size_t v = 0; v < assistant_views[a].size(); ++v) {
        const TensorView& view = assistant_views[a][v];
        for (std::size_t i = 0; i < view.grad.size(); ++i) {
          if (view.grad[i] != 0.0) touched[a][v][i] = true;
        }
      }
    }

    sgd_update(net.unique_tensors(), options.lr);
    sgd_update(head_tensors(head), options.lr);
    net.commit_running_stats(trace);
  }

  for (std::size_t a = 0; a < assistant_views.size(); ++a) {
    for (std::size_t v = 0; v < assistant_views[a].size(); ++v) {
      const auto& flags = touched[a][v];
      const auto hit = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
      log.assistant_elements += flags.size();
      log.assistant_elements_with_gradient += hit;
      if (hit < flags.size()) log.assistant_tensors_missing_gradient.push_back(assistant_views[a][v].name);
    }
  }
  if (options.evaluate_at_end) log.final_metrics = evaluate(net, head, dataset);
  return log;
}

TensorList export_model(CBNet& net, Head& head) {
  std::vector<TensorView> views = net.named_tensors();
  for (TensorView& v : head_tensors(head)) views.push_back(std::move(v));
  return export_tensors(views);
}

void import_model(CBNet& net, Head& head, const TensorList& tensors) {
  const bool full = std::any_of(tensors.begin(), tensors.end(),
                                [](const NamedTensor& t) { return t.name.rfind("b1.", 0) == 0; });
  if (full) {
    import_tensors(net.named_tensors(), tensors);
  } else {
    load_backbone_into_all(net, tensors);
  }
  if (find_tensor(tensors, "head.objectness.weight")) import_tensors(head_tensors(head), tensors);
}

}  // namespace cbnet
