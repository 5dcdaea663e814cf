#include "pga/metrics.hpp"

#include "pga/errors.hpp"

#include <algorithm>

namespace pga {

ApResult average_precision(const std::vector<std::vector<Detection>>& detections,
                           const std::vector<std::vector<GroundTruth>>& gts, int class_id, double iou_threshold) {
    if (detections.size() != gts.size()) {
        throw InvalidParameter("average_precision: " + std::to_string(detections.size()) + " detection lists for " +
                               std::to_string(gts.size()) + " images");
    }
    ApResult result;
    for (const auto& g : gts) {
        result.gt_count += static_cast<std::size_t>(
            std::count_if(g.begin(), g.end(), [&](const GroundTruth& t) { return t.class_id == class_id; }));
    }
    if (result.gt_count == 0) throw InvalidParameter("average_precision: no ground truth of class " + std::to_string(class_id));

    struct Ranked {
        std::size_t image, box;
        double confidence;
    };
    std::vector<Ranked> ranked;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        for (std::size_t b = 0; b < detections[i].size(); ++b) {
            if (detections[i][b].class_id == class_id) ranked.push_back({i, b, detections[i][b].confidence});
        }
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.image != b.image) return a.image < b.image;
        return a.box < b.box;
    });

    std::vector<std::vector<bool>> matched(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) matched[i].assign(gts[i].size(), false);

    std::size_t tp = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        const auto& det = detections[ranked[r].image][ranked[r].box];
        const auto& g = gts[ranked[r].image];
        double best = -1.0;
        std::size_t best_j = g.size();
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (g[j].class_id != class_id || matched[ranked[r].image][j]) continue;
            const double o = iou(det.bbox, g[j].bbox);
            if (o > best) {
                best = o;
                best_j = j;
            }
        }
        PrPoint p;
        p.confidence = ranked[r].confidence;
        if (best_j < g.size() && best >= iou_threshold) {
            matched[ranked[r].image][best_j] = true;
            p.true_positive = true;
            ++tp;
        }
        p.recall = static_cast<double>(tp) / static_cast<double>(result.gt_count);
        p.precision = static_cast<double>(tp) / static_cast<double>(r + 1);
        result.curve.push_back(p);
    }

    // Precision envelope, then sum over recall steps.
    std::vector<double> envelope(result.curve.size());
    double running = 0.0;
    for (std::size_t r = result.curve.size(); r-- > 0;) {
        running = std::max(running, result.curve[r].precision);
        envelope[r] = running;
    }
    double prev_recall = 0.0;
    for (std::size_t r = 0; r < result.curve.size(); ++r) {
        if (result.curve[r].recall > prev_recall) {
            result.ap += (result.curve[r].recall - prev_recall) * envelope[r];
            prev_recall = result.curve[r].recall;
        }
    }
    return result;
}

double ap_at_05(const std::vector<std::vector<Detection>>& detections, const std::vector<std::vector<GroundTruth>>& gts,
                int class_id) {
    return average_precision(detections, gts, class_id, 0.5).ap;
}

}  // namespace pga
