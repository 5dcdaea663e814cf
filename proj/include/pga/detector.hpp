#pragma once

#include "pga/image.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pga {

/// Axis-aligned box in pixel coordinates.
struct BBox {
    double xmin = 0.0;
    double ymin = 0.0;
    double xmax = 0.0;
    double ymax = 0.0;

    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
    double area() const { return width() * height(); }
    bool valid() const { return xmax > xmin && ymax > ymin; }
};

double iou(const BBox& a, const BBox& b);

struct Detection {
    BBox bbox;
    int class_id = 0;
    double confidence = 0.0;
};

struct GroundTruth {
    BBox bbox;
    int class_id = 0;
};

enum class Activation { Identity, Relu, LeakyRelu };

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    Activation activation = Activation::Relu;
};

struct AnchorShape {
    double width = 0.0;
    double height = 0.0;
};

/// A stack of convolutions whose last layer is the detection head. The head emits, per
/// grid cell and anchor, `num_classes` class logits followed by four box deltas
/// (dx, dy, dw, dh) relative to the anchor.
struct Architecture {
    std::vector<ConvSpec> layers;
    int num_classes = 2;
    std::vector<AnchorShape> anchors;

    int stride() const;
    int values_per_anchor() const { return num_classes + 4; }
    int head_channels() const { return static_cast<int>(anchors.size()) * values_per_anchor(); }
    void validate() const;
};

/// Five 3x3/1x1 convolutions with total stride 8, two classes and four anchor shapes tuned for
/// 64x64 renders of the toy scene.
Architecture toy_architecture();

inline constexpr int kTargetClass = 0;
inline constexpr int kDecoyClass = 1;

class DetectorModel {
public:
    DetectorModel() = default;
    /// Zero weights and biases.
    explicit DetectorModel(Architecture arch);

    const Architecture& architecture() const { return arch_; }

    /// He-normal initialization from `seed`; biases zero except the class logits, which start
    /// at `class_bias` so that early training is not swamped by background anchors.
    void initialize(std::uint64_t seed, double class_bias = -3.0);

    std::vector<double>& weights(std::size_t layer) { return weights_[layer]; }
    const std::vector<double>& weights(std::size_t layer) const { return weights_[layer]; }
    std::vector<double>& biases(std::size_t layer) { return biases_[layer]; }
    const std::vector<double>& biases(std::size_t layer) const { return biases_[layer]; }
    std::size_t parameter_count() const;

    double score_threshold = 0.5;
    double nms_iou = 0.5;

private:
    Architecture arch_;
    std::vector<std::vector<double>> weights_;  // [out][in][ky][kx]
    std::vector<std::vector<double>> biases_;
};

/// One anchor's prediction in raw mode.
struct RawCandidate {
    BBox bbox;
    std::vector<double> confidence;  // sigmoid of each class logit
};

struct RawOutput {
    int grid_width = 0;
    int grid_height = 0;
    std::vector<RawCandidate> candidates;  // index = (gy * grid_width + gx) * anchors + a
    std::vector<double> head;              // raw head activations, channel-major [C][gy][gx]

    double logit(std::size_t candidate, int cls, int num_classes, int anchors) const;
};

/// Every anchor candidate with its per-class confidence. Throws InvalidParameter when the image
/// is not 3-channel or its size is not divisible by the model stride.
RawOutput detect_raw(const DetectorModel& model, const Image& image);

/// Eval mode: per candidate the best class is kept when its confidence is strictly above
/// model.score_threshold, followed by class-wise NMS at model.nms_iou. Sorted by confidence.
std::vector<Detection> detect(const DetectorModel& model, const Image& image);
std::vector<Detection> postprocess(const RawOutput& raw, double score_threshold, double nms_iou);
std::vector<Detection> non_max_suppression(std::vector<Detection> detections, double iou_threshold);

enum class DetectMode { Raw, Eval };

/// Gradient of a scalar loss with respect to the raw candidates.
struct RawGradient {
    std::vector<double> logits;  // [candidate][class]
    std::vector<double> deltas;  // [candidate][4]
};

/// A scalar loss over detector outputs. Only raw-mode selectors are differentiable.
struct LossSelector {
    DetectMode mode = DetectMode::Raw;
    /// Returns the loss and writes d loss / d logits and d loss / d deltas into the gradient,
    /// which arrives zero-filled and sized for the output.
    std::function<double(const RawOutput&, RawGradient&)> evaluate;
};

struct InputGradient {
    double loss = 0.0;
    Image gradient;  // same shape as the input image
    RawOutput raw;
};

/// Exact reverse-mode gradient of selector(detect_raw(image)) with respect to the image pixels.
/// Throws ContractError for eval-mode selectors.
InputGradient input_gradient(const DetectorModel& model, const Image& image, const LossSelector& selector);

/// Weight file: "PGADET" magic, uint32 version, uint32 descriptor length, JSON architecture
/// descriptor, then float64 weights and biases per layer.
void save_detector(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_detector(const std::filesystem::path& path);

// ---- training ---------------------------------------------------------------------------

struct DetectionSample {
    Image image;
    std::vector<GroundTruth> objects;
    bool holdout = false;
};

using DetectionDataset = std::vector<DetectionSample>;

struct TrainConfig {
    int epochs = 30;
    int min_epochs = 6;
    int batch_size = 16;
    double learning_rate = 3e-3;
    double positive_iou = 0.5;
    double negative_iou = 0.4;
    double box_weight = 1.0;
    int holdout_every = 5;      // used only when no sample is flagged holdout
    double required_ap = 0.85;  // held-out AP@0.5 the run must reach
    double early_stop_ap = 0.97;
    bool horizontal_flip = true;
    std::uint64_t seed = 7;
};

struct TrainReport {
    bool reached_target = false;
    double heldout_ap = 0.0;  // of the returned model
    int epochs_run = 0;
    std::vector<double> epoch_loss;
    std::vector<double> epoch_heldout_ap;
    std::string message;
};

struct TrainResult {
    DetectorModel model;
    TrainReport report;
};

/// Trains `toy_architecture()` (or `arch` when given) with Adam. Deterministic for a fixed seed.
/// Throws PreconditionError with fewer than 100 samples. A run that does not reach
/// cfg.required_ap returns reached_target = false and an explanatory message.
TrainResult train_toy_detector(const DetectionDataset& dataset, const TrainConfig& cfg);
TrainResult train_detector(const DetectionDataset& dataset, const Architecture& arch, const TrainConfig& cfg);

/// Dataset manifest: directory with manifest.json
///   {"samples": [{"image": "00000.png", "holdout": false,
///                 "objects": [{"box": [xmin, ymin, xmax, ymax], "class_id": 0}]}]}
void save_detection_dataset(const DetectionDataset& dataset, const std::filesystem::path& directory);
DetectionDataset load_detection_dataset(const std::filesystem::path& directory);

}  // namespace pga
