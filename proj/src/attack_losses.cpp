#include "pga/attack.hpp"
#include "pga/errors.hpp"

#include <cmath>

namespace pga {

DetectionLossValue detection_loss(std::span<const RawCandidate> candidates, const GroundTruth& gt) {
    if (candidates.empty()) throw ContractError("detection_loss: no raw candidates");
    if (!gt.bbox.valid()) throw InvalidParameter("detection_loss: invalid ground-truth box");
    DetectionLossValue best;
    best.iou = -1.0;
    for (std::size_t m = 0; m < candidates.size(); ++m) {
        const double o = iou(gt.bbox, candidates[m].bbox);
        if (o > best.iou) {
            best.iou = o;
            best.candidate = m;
        }
    }
    const auto& conf = candidates[best.candidate].confidence;
    if (gt.class_id < 0 || static_cast<std::size_t>(gt.class_id) >= conf.size()) {
        throw InvalidParameter("detection_loss: class id out of range");
    }
    best.value = conf[gt.class_id];
    return best;
}

double detection_loss_batch(const std::vector<std::vector<RawCandidate>>& candidates,
                            const std::vector<GroundTruth>& gts) {
    if (candidates.size() != gts.size()) throw InvalidParameter("detection_loss_batch: length mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < gts.size(); ++i) sum += detection_loss(candidates[i], gts[i]).value;
    return sum;
}

LossSelector detection_loss_selector(const GroundTruth& gt) {
    LossSelector sel;
    sel.mode = DetectMode::Raw;
    sel.evaluate = [gt](const RawOutput& raw, RawGradient& grad) {
        const auto v = detection_loss(raw.candidates, gt);
        const std::size_t classes = raw.candidates.front().confidence.size();
        grad.logits[v.candidate * classes + gt.class_id] = v.value * (1.0 - v.value);
        return v.value;
    };
    return sel;
}

namespace {

Vec3 pixel(const Image& im, std::size_t p) {
    const double* d = &im.data[p * 3];
    return {d[0], d[1], d[2]};
}

void check_shapes(const Image& image, const Mask& mask, const char* what) {
    if (image.channels != 3 || image.width != mask.width || image.height != mask.height) {
        throw InvalidParameter(std::string(what) + ": image must be RGB and match the mask size");
    }
}

}  // namespace

double nps(const Image& image, const Mask& mask, const PrintableColorSet& printable, Image* grad) {
    check_shapes(image, mask, "nps");
    if (printable.empty()) throw InvalidParameter("nps: empty printable colour set");
    if (grad) *grad = Image(image.width, image.height, 3);
    const std::size_t n = mask.count();
    if (n == 0) return 0.0;
    const std::size_t P = printable.size();
    std::vector<double> dist(P), prefix(P + 1), suffix(P + 1);
    double sum = 0.0;
    for (std::size_t p = 0; p < image.pixel_count(); ++p) {
        if (!mask.data[p]) continue;
        const Vec3 c = pixel(image, p);
        double prod = 1.0;
        for (std::size_t j = 0; j < P; ++j) {
            dist[j] = (c - printable[j]).norm();
            prod *= dist[j];
        }
        sum += prod;
        if (!grad) continue;
        prefix[0] = 1.0;
        for (std::size_t j = 0; j < P; ++j) prefix[j + 1] = prefix[j] * dist[j];
        suffix[P] = 1.0;
        for (std::size_t j = P; j-- > 0;) suffix[j] = suffix[j + 1] * dist[j];
        Vec3 g = Vec3::Zero();
        for (std::size_t j = 0; j < P; ++j) {
            if (dist[j] > 0.0) g += prefix[j] * suffix[j + 1] * (c - printable[j]) / dist[j];
        }
        g /= static_cast<double>(n);
        for (int k = 0; k < 3; ++k) grad->data[p * 3 + k] = g[k];
    }
    return sum / static_cast<double>(n);
}

double color_regularizer(const Image& image, const Mask& mask, std::span<const Vec3> palette, Image* grad) {
    check_shapes(image, mask, "color_regularizer");
    if (palette.empty()) throw InvalidParameter("color_regularizer: empty palette");
    if (grad) *grad = Image(image.width, image.height, 3);
    const std::size_t n = mask.count();
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t p = 0; p < image.pixel_count(); ++p) {
        if (!mask.data[p]) continue;
        const Vec3 c = pixel(image, p);
        double best = (c - palette[0]).norm();
        std::size_t arg = 0;
        for (std::size_t i = 1; i < palette.size(); ++i) {
            const double d = (c - palette[i]).norm();
            if (d < best) {
                best = d;
                arg = i;
            }
        }
        sum += best;
        if (grad && best > 0.0) {
            const Vec3 g = (c - palette[arg]) / (best * static_cast<double>(n));
            for (int k = 0; k < 3; ++k) grad->data[p * 3 + k] = g[k];
        }
    }
    return sum / static_cast<double>(n);
}

double anchor_regularizer(std::span<const double> k0_now, std::span<const double> k0_ori, std::vector<double>* grad) {
    if (k0_now.size() != k0_ori.size()) {
        throw InvalidParameter("anchor_regularizer: " + std::to_string(k0_now.size()) + " vs " +
                               std::to_string(k0_ori.size()) + " coefficients");
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < k0_now.size(); ++i) sq += (k0_now[i] - k0_ori[i]) * (k0_now[i] - k0_ori[i]);
    const double norm = std::sqrt(sq);
    if (grad) {
        grad->assign(k0_now.size(), 0.0);
        if (norm > 0.0) {
            for (std::size_t i = 0; i < k0_now.size(); ++i) (*grad)[i] = (k0_now[i] - k0_ori[i]) / norm;
        }
    }
    return norm;
}

}  // namespace pga
