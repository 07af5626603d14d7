#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cbnet/backbone.hpp"

namespace cbnet {

// Which previous-backbone stage outputs are injected into stage l of
// backbone k (l >= 2), always added to the stage input x_k^{l-1}:
//   AHLC  g(x_{k-1}^l)
//   SLC   x_{k-1}^{l-1}, added directly with no learned connection
//   ALLC  g(x_{k-1}^{l+1}), omitted at l = L
//   DHLC  sum over i = l..L of g_i(x_{k-1}^i)
enum class CompositeStyle { AHLC, SLC, ALLC, DHLC };

std::string_view style_name(CompositeStyle style);
// Case-insensitive; "adlc" is accepted as an alias of DHLC.
CompositeStyle parse_style(std::string_view text);

// g(.): 1x1 channel-reducing conv, batchnorm, then nearest-neighbor resize to
// the tensor it is added to.
struct CompositeConnection {
  ConvParams conv;
  BatchNormParams bn;
  std::size_t target_h = 0;
  std::size_t target_w = 0;

  std::size_t param_count() const { return conv.param_count() + bn.param_count(); }
};

struct CompositeTrace {
  Tensor4 source;
  BatchNormCache bn;
  Shape resize_input;
};

CompositeConnection make_composite(std::size_t source_channels, std::size_t target_channels,
                                   std::size_t target_h, std::size_t target_w, Rng& rng);
Tensor4 composite_apply(const CompositeConnection& g, const Tensor4& source,
                        CompositeTrace* trace = nullptr);
Tensor4 composite_backward(CompositeConnection& g, const CompositeTrace& trace,
                           const Tensor4& grad_out);

// Identifies g by receiving backbone k, stage l and, for DHLC, source stage i.
// Backbones are numbered 1..K with K the lead.
struct ConnectionKey {
  std::size_t k = 0;
  std::size_t l = 0;
  std::optional<std::size_t> i;

  std::string name() const;  // "g.{k}.{l}" or "g.{k}.{l}.{i}"
  auto operator<=>(const ConnectionKey&) const = default;
};

struct CBNetConfig {
  std::size_t k = 2;
  CompositeStyle style = CompositeStyle::AHLC;
  bool share_weights = false;
  bool accelerated = false;
  BackboneSpec spec;

  void validate() const;
};

// Lead backbone outputs x_K^l for l = first_level..L.
struct FeaturePyramid {
  std::size_t first_level = 2;
  std::vector<Tensor4> levels;

  const Tensor4& level(std::size_t l) const { return levels.at(l - first_level); }
  std::size_t last_level() const { return first_level + levels.size() - 1; }
};

// One addend of a stage input besides x_k^{l-1}.
struct CompositeTerm {
  std::size_t source_backbone = 0;
  std::size_t source_level = 0;
  std::optional<ConnectionKey> connection;  // nullopt: direct addition
};

// Runs the stem (level 0) or stage `level` of backbone `backbone`.
struct PlanStep {
  std::size_t backbone = 0;
  std::size_t level = 0;
  bool from_image = false;
  std::size_t input_backbone = 0;
  std::size_t input_level = 0;
  std::vector<CompositeTerm> terms;
};

struct StepTrace {
  StemTrace stem;
  StageTrace stage;
  std::vector<CompositeTrace> terms;
};

struct ForwardTrace {
  Tensor4 image;
  std::vector<Tensor4> values;  // indexed by CBNet::value_index
  std::vector<StepTrace> steps;
  Tensor4 image_grad;
};

class CBNet {
 public:
  static CBNet build(const CBNetConfig& config, std::uint64_t seed);

  CBNet(CBNet&&) noexcept = default;
  CBNet& operator=(CBNet&&) noexcept = default;
  CBNet(const CBNet&) = delete;
  CBNet& operator=(const CBNet&) = delete;

  // Deep copy that preserves the sharing structure.
  CBNet clone() const;

  const CBNetConfig& config() const { return config_; }
  const BackboneSpec& spec() const { return config_.spec; }
  std::size_t backbone_count() const { return backbones_.size(); }
  Backbone& backbone(std::size_t k) { return backbones_.at(k - 1); }
  const Backbone& backbone(std::size_t k) const { return backbones_.at(k - 1); }
  Backbone& lead() { return backbones_.back(); }

  std::map<ConnectionKey, CompositeConnection>& connections() { return connections_; }
  const std::map<ConnectionKey, CompositeConnection>& connections() const { return connections_; }
  CompositeConnection& connection(const ConnectionKey& key) { return connections_.at(key); }

  const std::vector<PlanStep>& plan() const { return plan_; }
  // Composite terms added without a learned connection (SLC).
  std::size_t direct_additions() const;

  FeaturePyramid forward(const Tensor4& image, ForwardTrace* trace = nullptr) const;
  // level_grads[j] is dLoss/dx_K^{j+2}; an empty tensor means zero.
  // Accumulates into parameter grads and trace.image_grad.
  void backward(ForwardTrace& trace, const std::vector<Tensor4>& level_grads);
  // Folds training-mode batch statistics from a trace into running stats.
  void commit_running_stats(const ForwardTrace& trace);
  std::uint64_t branch_signature(const ForwardTrace& trace) const;

  // Every backbone under "b{k}." (shared storage appears once per backbone),
  // then every connection under its key name.
  std::vector<TensorView> named_tensors();
  // Distinct storage only: shared backbone parameters are listed once.
  std::vector<TensorView> unique_tensors();
  std::vector<TensorView> connection_tensors();

  void set_bn_mode(BnMode mode);
  void zero_grad();

  std::size_t value_index(std::size_t backbone, std::size_t level) const {
    return (backbone - 1) * (config_.spec.stages + 1) + level;
  }

 private:
  CBNet() = default;
  void compile();
  std::vector<BackboneParams*> unique_stores();

  CBNetConfig config_;
  std::vector<Backbone> backbones_;
  std::map<ConnectionKey, CompositeConnection> connections_;
  std::vector<PlanStep> plan_;
};

CBNet build_cbnet(const CBNetConfig& config, std::uint64_t seed);
FeaturePyramid cbnet_forward(const CBNet& net, const Tensor4& image);

// Copies a single-backbone tensor list ("stem.*", "stage{l}.*") into every
// backbone of the net. Stages a truncated assistant lacks are skipped.
void load_backbone_into_all(CBNet& net, const TensorList& single);

}  // namespace cbnet
