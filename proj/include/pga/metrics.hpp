#pragma once

#include "pga/detector.hpp"

#include <vector>

namespace pga {

/// One point of the precision/recall curve, after each ranked detection.
struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
    double confidence = 0.0;
    bool true_positive = false;
};

struct ApResult {
    double ap = 0.0;
    std::size_t gt_count = 0;
    std::vector<PrPoint> curve;
};

/// AP@0.5 for `class_id`. Detections of that class are pooled across images and ranked by
/// confidence (descending; ties by image index, then by position in the image's list). Each
/// detection is matched greedily to the unmatched gt of the same image with the highest IoU,
/// provided that IoU is >= 0.5. AP is the area under the precision envelope (all-point
/// interpolation). Throws InvalidParameter when there is no gt of the class, or when the two
/// collections differ in length.
ApResult average_precision(const std::vector<std::vector<Detection>>& detections,
                           const std::vector<std::vector<GroundTruth>>& gts, int class_id = kTargetClass,
                           double iou_threshold = 0.5);

double ap_at_05(const std::vector<std::vector<Detection>>& detections, const std::vector<std::vector<GroundTruth>>& gts,
                int class_id = kTargetClass);

}  // namespace pga
