#pragma once

#include "pga/camera.hpp"
#include "pga/detector.hpp"
#include "pga/image.hpp"
#include "pga/renderer.hpp"
#include "pga/scene.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace pga {

// ---- detection loss ---------------------------------------------------------------------

struct DetectionLossValue {
    double value = 0.0;          // confidence of gt.class_id in the selected candidate
    std::size_t candidate = 0;   // argmax-IoU candidate, lowest index on ties
    double iou = 0.0;
};

/// Confidence of the correct class in the candidate that overlaps `gt` most.
/// Throws ContractError for an empty candidate list.
DetectionLossValue detection_loss(std::span<const RawCandidate> candidates, const GroundTruth& gt);

/// Sum of the per-image losses. Throws InvalidParameter on a length mismatch.
double detection_loss_batch(const std::vector<std::vector<RawCandidate>>& candidates,
                            const std::vector<GroundTruth>& gts);

/// Raw-mode selector computing detection_loss and its logit gradient.
LossSelector detection_loss_selector(const GroundTruth& gt);

// ---- regularizers -----------------------------------------------------------------------

using PrintableColorSet = std::vector<Vec3>;

/// Mean over masked pixels of prod_{p' in P} ||p - p'||. 0 for an empty mask.
/// `grad`, when given, receives d/d image (same shape as image, zero outside the mask).
double nps(const Image& image, const Mask& mask, const PrintableColorSet& printable, Image* grad = nullptr);

/// Mean over masked pixels of min_i ||p - c_i||. 0 for an empty mask.
double color_regularizer(const Image& image, const Mask& mask, std::span<const Vec3> palette, Image* grad = nullptr);

/// ||k0_now - k0_ori||_2. Throws InvalidParameter on a length mismatch.
double anchor_regularizer(std::span<const double> k0_now, std::span<const double> k0_ori,
                          std::vector<double>* grad = nullptr);

// ---- EoT --------------------------------------------------------------------------------

struct EotRanges {
    bool enabled = true;
    double scale_min = 0.8, scale_max = 1.2;
    double contrast_min = 0.8, contrast_max = 1.2;
    double brightness_min = -0.1, brightness_max = 0.1;
    double noise = 0.02;  // per-pixel uniform in [-noise, noise]

    void validate() const;
};

struct TransformSample {
    double scale = 1.0;
    double contrast = 1.0;
    double brightness = 0.0;
    Image noise;  // empty means no noise

    static TransformSample identity() { return {}; }
};

/// Draws scale, contrast, brightness and then the noise field, in that order.
TransformSample eot_sample(std::mt19937_64& rng, const EotRanges& ranges, int width, int height);

/// Bilinear rescale about the image centre (edge pixels replicate when shrinking), then
/// clamp(contrast * p + brightness + noise, 0, 1).
Image eot_apply(const Image& image, const TransformSample& t);

/// d loss / d image given d loss / d eot_apply(image). The noise is a constant; the clamp
/// passes gradient on [0, 1] inclusive.
Image eot_backward(const Image& image, const TransformSample& t, const Image& grad_output);

/// Where a box lands under the rescale, clipped to the image.
BBox eot_box(const BBox& box, const TransformSample& t, int width, int height);

// ---- palette ----------------------------------------------------------------------------

struct ColorPalette {
    std::vector<Vec3> colors;              // by descending cluster population
    std::vector<std::size_t> populations;
    bool duplicate_centroids = false;      // fewer distinct colours than k
    int iterations = 0;
};

/// K-means with k-means++ seeding from `seed`, at most 100 Lloyd iterations, stopping when no
/// centroid moves more than 1e-5. Throws InvalidParameter for k < 1 or fewer pixels than k.
ColorPalette build_palette(std::span<const Vec3> pixels, int k, std::uint64_t seed = 0);

/// 30 swatches sampled without replacement from the 3-bit-per-channel lattice.
PrintableColorSet default_printable_colors();

/// One colour per line as 6 hex digits with an optional leading '#'. Blank lines and lines
/// starting with "//" are skipped. Bad lines throw ParseError with the line number.
PrintableColorSet parse_printable_colors(std::istream& in);
PrintableColorSet load_printable_colors(const std::filesystem::path& path);
void save_printable_colors(const PrintableColorSet& colors, const std::filesystem::path& path);

// ---- attack configuration ---------------------------------------------------------------

struct SuccessCriteria {
    double confidence = 0.5;  // a correct detection needs at least this confidence
    double iou = 0.5;         // and at least this overlap with the gt
};

struct AttackConfig {
    double epsilon = 8.0 / 255.0;
    double bg_step_size = 2.0 / 255.0;
    int bg_steps = 8;
    // Raw gradients w.r.t. <k>_0 are ~1e-3 per coefficient at 64x64, so the step is large.
    double eta = 100.0;
    double lambda = 0.1;
    int inner_iters_per_view = 10;
    int outer_epochs = 20;
    int palette_k = 4;
    bool min_max = true;  // false disables the background maximization
    double mask_threshold = 0.5;
    EotRanges eot;
    SuccessCriteria success;
    std::uint64_t rng_seed = 0;

    /// Throws InvalidParameter on the first violated invariant.
    void validate() const;
};

/// JSON with every field; unknown keys and wrong types throw InvalidParameter.
std::string attack_config_to_json(const AttackConfig& cfg, int indent = 2);
AttackConfig attack_config_from_json(const std::string& text);
AttackConfig load_attack_config(const std::filesystem::path& path);

// ---- per-view state ---------------------------------------------------------------------

struct ViewState {
    CameraView camera;
    Image original;       // I_ori, render of the unattacked scene
    Mask mask;            // M
    GroundTruth gt;
    RenderOutput render;  // current render with trace

    Image detect_image() const;  // I_r * M + I_ori * (1 - M)
};

ViewState prepare_view(const GaussianScene& original_scene, const GaussianScene& current, const CameraView& camera,
                       const GroundTruth& gt, double mask_threshold);
void refresh_view(ViewState& view, const GaussianScene& current);

/// Box around the mask, or nullopt for an empty mask.
std::optional<GroundTruth> ground_truth_from_mask(const Mask& mask, int class_id = kTargetClass);

/// True when eval-mode detection finds a box of gt.class_id with IoU and confidence at least
/// the success thresholds.
bool target_detected(const DetectorModel& detector, const Image& image, const GroundTruth& gt,
                     const SuccessCriteria& success);

// ---- background maximization ------------------------------------------------------------

struct BackgroundPerturbation {
    Image sigma;  // H x W x 3
    int steps = 0;
    bool stopped_early = false;
    double loss_before = 0.0;
    double loss_after = 0.0;

    double linf() const;
};

/// Called after every I-FGSM step with the current perturbation.
using SigmaHook = std::function<void(const BackgroundPerturbation&, const Mask&, double epsilon)>;

BackgroundPerturbation background_maximize(const ViewState& view, const DetectorModel& detector,
                                           const GroundTruth& gt, const AttackConfig& cfg,
                                           const SigmaHook& hook = {});

// ---- total loss -------------------------------------------------------------------------

struct LossBreakdown {
    double detection = 0.0;
    double nps = 0.0;
    double color = 0.0;
    double anchor = 0.0;
    double total = 0.0;
};

struct TotalLoss {
    LossBreakdown breakdown;
    std::vector<double> grad_k0;  // ZeroOrderView flat order
};

/// L_det(T(I_det + sigma (1 - M))) + lambda (NPS + L_clr + ||k0 - k0_ori||) for a given T.
/// `scene` must be the scene `view.render` was produced from.
TotalLoss total_loss(const ViewState& view, const GaussianScene& scene, const DetectorModel& detector,
                     const GroundTruth& gt, const std::vector<Vec3>& palette, const PrintableColorSet& printable,
                     std::span<const double> k0_ori, const Image& sigma, const TransformSample& t,
                     const AttackConfig& cfg);

/// Same with a fresh EoT sample from `rng` (identity when cfg.eot.enabled is false).
TotalLoss total_loss(const ViewState& view, const GaussianScene& scene, const DetectorModel& detector,
                     const GroundTruth& gt, const std::vector<Vec3>& palette, const PrintableColorSet& printable,
                     std::span<const double> k0_ori, const Image& sigma, std::mt19937_64& rng,
                     const AttackConfig& cfg);

// ---- log --------------------------------------------------------------------------------

enum class LogEvent { Header, ViewStart, Skip, Background, Iteration, NonFinite, Success, ViewError, ViewEnd, Done };

const char* to_string(LogEvent e);

struct LogRecord {
    std::uint64_t seq = 0;  // monotone logical timestamp
    LogEvent event = LogEvent::Header;
    int epoch = -1;
    int view = -1;
    int iteration = -1;
    std::optional<LossBreakdown> losses;
    std::optional<double> sigma_linf;
    std::optional<int> bg_steps;
    std::optional<bool> success;
    std::string message;
    std::string data_json;  // optional JSON object attached verbatim
};

class AttackLog {
public:
    /// Assigns the next sequence number.
    void append(LogRecord record);
    const std::vector<LogRecord>& records() const { return records_; }
    std::size_t count(LogEvent e) const;

    void write_ndjson(std::ostream& out) const;
    std::string to_ndjson() const;

private:
    std::vector<LogRecord> records_;
};

/// Returns false and leaves the scene untouched when the gradient has a non-finite entry;
/// the event is appended to `log` when one is given.
bool camouflage_step(GaussianScene& scene, std::span<const double> grad_k0, const AttackConfig& cfg,
                     AttackLog* log = nullptr);

// ---- run --------------------------------------------------------------------------------

struct AttackHooks {
    SigmaHook on_sigma;
    std::function<void(int epoch, int view, const GaussianScene&)> on_step;
};

struct AttackInputs {
    std::optional<ColorPalette> palette;  // built from the views' backgrounds when absent
    PrintableColorSet printable;          // default_printable_colors() when empty
    AttackHooks hooks;
};

struct AttackResult {
    GaussianScene scene;
    AttackLog log;
    ColorPalette palette;
    std::vector<int> iterations_per_view;  // camouflage steps, summed over epochs
};

/// Background pixels I_ori * (1 - M) of every view.
std::vector<Vec3> background_pixels(const GaussianScene& scene, const std::vector<CameraView>& views,
                                    double mask_threshold);

AttackResult run_attack(const GaussianScene& scene, const std::vector<CameraView>& views,
                        const DetectorModel& detector, const std::vector<GroundTruth>& gt_per_view,
                        const AttackConfig& cfg, const AttackInputs& inputs = {});

}  // namespace pga
