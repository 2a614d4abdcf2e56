#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aofd/geometry.hpp"
#include "aofd/mask_generator.hpp"
#include "aofd/nn.hpp"
#include "aofd/random.hpp"
#include "aofd/segmentation.hpp"
#include "aofd/tensor.hpp"

namespace aofd {

// Anchor shapes: `aspect_ratios` are height / width, `scales` are areas in
// square pixels, `stride` is the feature-map stride in pixels.
struct AnchorConfig {
  std::vector<double> aspect_ratios{1.7, 1.0, 1.3};
  std::vector<double> scales{16.0 * 16.0, 32.0 * 32.0, 64.0 * 64.0, 96.0 * 96.0};
  int stride = 8;

  int anchors_per_cell() const {
    return static_cast<int>(aspect_ratios.size() * scales.size());
  }
  void validate() const;
};

// One anchor per (cell, ratio, scale), centred on the cell center. Index
// order is ((y * W + x) * R + r) * S + s.
std::vector<BoundingBox> generate_anchors(const AnchorConfig& config,
                                          int map_height, int map_width);

// Four conv blocks (3x3 + ReLU), the first three followed by 2x2 max pooling:
// stride 8 overall.
struct Backbone {
  static constexpr int kStride = 8;
  std::array<Conv2d, 4> layers;
  int feature_channels = 0;

  Backbone() = default;
  Backbone(int input_channels, int base_width, int feature_channels);

  void init(Rng& rng);
  template <typename F>
  void for_each_param(F&& f) {
    for (auto& layer : layers) layer.for_each_param(f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    for (const auto& layer : layers) layer.for_each_param(f);
  }
};

struct BackboneCache {
  std::array<Conv2dCache, 4> convs;
  std::array<Tensor, 4> activations;  // post-ReLU outputs
  std::array<std::vector<int>, 3> pool_argmax;
};

// Image tensor (C x H x W) in, C' x ceil(H/8) x ceil(W/8) features out. The
// image is zero-padded at the bottom/right to a multiple of the stride.
// Throws when either side is smaller than one stride.
Tensor backbone_forward(const Backbone& backbone, const Tensor& image,
                        BackboneCache* cache = nullptr);

// Accumulates parameter gradients. The input gradient is not needed for
// training and is not computed.
void backbone_backward(Backbone& backbone, const BackboneCache& cache,
                       const Tensor& grad_features);

struct RegionProposalNetwork {
  Conv2d conv;        // 3x3, C -> C
  Conv2d objectness;  // 1x1, C -> 2A (background/face logits per anchor)
  Conv2d regression;  // 1x1, C -> 4A
  int anchors_per_cell = 0;

  RegionProposalNetwork() = default;
  RegionProposalNetwork(int feature_channels, int anchors_per_cell);

  void init(Rng& rng);
  template <typename F>
  void for_each_param(F&& f) {
    conv.for_each_param(f);
    objectness.for_each_param(f);
    regression.for_each_param(f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    conv.for_each_param(f);
    objectness.for_each_param(f);
    regression.for_each_param(f);
  }
};

struct RpnOutput {
  Tensor logits;  // 2A x H x W; channel 2a + k is class k of anchor slot a
  Tensor deltas;  // 4A x H x W; channel 4a + j is delta j of anchor slot a
  Conv2dCache conv_cache;
  Conv2dCache objectness_cache;
  Conv2dCache regression_cache;
  Tensor hidden;  // post-ReLU output of the 3x3 conv
};

RpnOutput rpn_forward(const RegionProposalNetwork& rpn, const Tensor& features);

// Returns d(loss)/d(features).
Tensor rpn_backward(RegionProposalNetwork& rpn, const RpnOutput& output,
                    const Tensor& grad_logits, const Tensor& grad_deltas);

// Face probability and deltas of anchor `index` (generate_anchors order).
double anchor_objectness(const RpnOutput& output, std::size_t index);
BoxDeltas anchor_deltas(const RpnOutput& output, std::size_t index);

struct RpnTargetConfig {
  double positive_iou = 0.7;
  double negative_iou = 0.3;
  int batch_size = 64;
  double positive_fraction = 0.5;
};

struct RpnTargets {
  std::vector<int> labels;  // -1 unused, 0 background, 1 face
  std::vector<BoxDeltas> deltas;
  int positives = 0;
  int negatives = 0;
};

// Standard anchor labelling: face when IoU >= positive_iou with a usable
// ground truth or when the anchor is that ground truth's best match,
// background below negative_iou. Anchors overlapping an ignored annotation by
// more than 0.5 are never sampled as background.
RpnTargets assign_anchor_targets(std::span<const BoundingBox> anchors,
                                 std::span<const Annotation> ground_truth,
                                 const RpnTargetConfig& config, Rng& rng);

struct RpnLoss {
  double classification = 0.0;
  double regression = 0.0;
};

RpnLoss rpn_loss(const RpnOutput& output, const RpnTargets& targets,
                 Tensor* grad_logits, Tensor* grad_deltas);

struct ProposalConfig {
  int pre_nms_top_n = 600;
  double nms_iou = 0.7;
  int post_nms_top_n = 100;
  double min_size = 4.0;
};

// Scored boxes, objectness descending after NMS.
struct ProposalSet {
  std::vector<BoundingBox> boxes;
  std::vector<double> objectness;
};

ProposalSet propose(const RpnOutput& output, std::span<const BoundingBox> anchors,
                    int image_width, int image_height,
                    const ProposalConfig& config);

inline constexpr int kBackgroundLabel = 0;
inline constexpr int kFaceLabel = 1;

struct SamplerConfig {
  int batch_size = 32;
  double foreground_fraction = 0.25;  // 1:3 foreground to background
  double foreground_iou = 0.5;
  bool append_ground_truth = true;
};

struct RoISample {
  BoundingBox box;
  int label = kBackgroundLabel;
  BoxDeltas regression_target{};
  std::optional<std::size_t> matched_gt;
};

struct SampleBatch {
  std::vector<RoISample> samples;  // foreground first
  int foreground = 0;
  bool no_foreground = false;
};

// Foreground: IoU > foreground_iou with a non-ignored annotation. Candidates
// whose best non-ignored IoU is at most foreground_iou but which overlap an
// ignored annotation by more than foreground_iou are dropped. Up to
// batch_size * foreground_fraction foregrounds are kept and the remainder of
// the batch is filled with backgrounds.
SampleBatch assign_and_sample(std::span<const BoundingBox> proposals,
                              std::span<const Annotation> ground_truth,
                              const SamplerConfig& config, Rng& rng,
                              const DeltaWeights& weights);

// Feature-cell span [begin, end) of each of the 7 x 7 pooling bins.
struct PoolBin {
  int y_begin = 0;
  int y_end = 0;
  int x_begin = 0;
  int x_end = 0;
};

// Projects `box` (image pixels) onto the map: cells floor(x1 / stride) to
// ceil(x2 / stride) - 1, clipped, at least one cell, split into 7 bins per
// side with floor/ceil boundaries. Throws when the box misses the map.
std::array<PoolBin, kRoiCells> roi_bins(const BoundingBox& box,
                                        const MapGeometry& geometry);

// Max pooling of each bin. `argmax` receives the flat feature index chosen
// for every output element.
Tensor roi_pool(const Tensor& features, const BoundingBox& box, int stride,
                std::vector<int>* argmax = nullptr);

void roi_pool_backward(const Tensor& grad_roi, const std::vector<int>& argmax,
                       Tensor& grad_features);

struct DetectionHeads {
  Linear hidden;
  Linear classifier;  // 2 logits
  Linear regressor;   // 4 deltas

  DetectionHeads() = default;
  DetectionHeads(int roi_channels, int hidden_units);

  void init(Rng& rng);
  template <typename F>
  void for_each_param(F&& f) {
    hidden.for_each_param(f);
    classifier.for_each_param(f);
    regressor.for_each_param(f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    hidden.for_each_param(f);
    classifier.for_each_param(f);
    regressor.for_each_param(f);
  }
};

struct HeadOutput {
  RowMatrix logits;  // n x 2
  RowMatrix deltas;  // n x 4
  RowMatrix input;   // n x (C * 49)
  RowMatrix hidden;  // post-ReLU
};

HeadOutput detect_heads(const DetectionHeads& heads, std::span<const Tensor> rois);

// Accumulates parameter gradients; returns d(loss)/d(roi) per RoI when
// `input_grad` is set.
std::vector<Tensor> detect_heads_backward(DetectionHeads& heads,
                                          const HeadOutput& output,
                                          const RowMatrix& grad_logits,
                                          const RowMatrix& grad_deltas,
                                          int roi_channels, bool input_grad = true);

// Face probability from a logit pair.
double face_probability(double background_logit, double face_logit);

enum class ParamGroup { kBackbone, kRpn, kHeads, kGenerator, kSegmentation };

const char* to_string(ParamGroup group);
ParamGroup parse_param_group(const std::string& text);
inline constexpr std::array<ParamGroup, 5> kAllParamGroups{
    ParamGroup::kBackbone, ParamGroup::kRpn, ParamGroup::kHeads,
    ParamGroup::kGenerator, ParamGroup::kSegmentation};

struct ModelConfig {
  int input_channels = 3;
  int backbone_width = 16;
  int feature_channels = 64;
  int head_hidden = 256;
  int segmentation_hidden = 32;
  AnchorConfig anchors;
  RpnTargetConfig rpn_targets;
  ProposalConfig train_proposals{600, 0.7, 100, 4.0};
  ProposalConfig test_proposals{600, 0.7, 100, 4.0};
  SamplerConfig sampler;
  DeltaWeights head_delta_weights{10.0, 10.0, 5.0, 5.0};
  double gate_factor = 1.3;

  void validate() const;
};

// Every parameter group of the detector. The generator is optional so that
// ablations without it carry no generator weights at all.
struct Model {
  ModelConfig config;
  Backbone backbone;
  RegionProposalNetwork rpn;
  DetectionHeads heads;
  std::optional<MaskGenerator> generator;
  SegmentationHead segmentation;

  static Model create(const ModelConfig& config, std::uint64_t seed,
                      bool with_generator = true);

  template <typename F>
  void for_each_param_in(ParamGroup group, F&& f) {
    visit_group(*this, group, f);
  }
  template <typename F>
  void for_each_param_in(ParamGroup group, F&& f) const {
    visit_group(*this, group, f);
  }
  template <typename F>
  void for_each_param(F&& f) {
    for (auto g : kAllParamGroups) visit_group(*this, g, f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    for (auto g : kAllParamGroups) visit_group(*this, g, f);
  }

  void zero_grad();
  bool has_detector_weights() const;

 private:
  template <typename Self, typename F>
  static void visit_group(Self& self, ParamGroup group, F& f) {
    switch (group) {
      case ParamGroup::kBackbone:
        self.backbone.for_each_param(f);
        break;
      case ParamGroup::kRpn:
        self.rpn.for_each_param(f);
        break;
      case ParamGroup::kHeads:
        self.heads.for_each_param(f);
        break;
      case ParamGroup::kGenerator:
        if (self.generator) self.generator->for_each_param(f);
        break;
      case ParamGroup::kSegmentation:
        self.segmentation.for_each_param(f);
        break;
    }
  }
};

struct InferenceConfig {
  double score_threshold = 0.05;
  double nms_iou = 0.3;
  int max_detections = 100;
};

struct Inference {
  std::vector<Detection> detections;  // descending score
  Tensor features;
  std::vector<BoundingBox> proposals;
};

// Proposals -> pooled RoIs (never masked) -> heads -> decoded boxes -> NMS ->
// threshold. Throws InvalidArgument when the model has no detector weights.
Inference run_inference(const Model& model, const Tensor& image,
                        const InferenceConfig& config);

std::vector<Detection> infer(const Model& model, const Tensor& image,
                             const InferenceConfig& config);

}  // namespace aofd
