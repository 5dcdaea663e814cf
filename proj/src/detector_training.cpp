#include "conv_net.hpp"
#include "pga/detector.hpp"
#include "pga/errors.hpp"
#include "pga/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace pga {
namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr std::size_t kMinSamples = 100;

struct Adam {
    std::vector<std::vector<double>> mw, vw, mb, vb;
    long step = 0;

    explicit Adam(const DetectorModel& model) {
        for (std::size_t l = 0; l < model.architecture().layers.size(); ++l) {
            mw.emplace_back(model.weights(l).size(), 0.0);
            vw.emplace_back(model.weights(l).size(), 0.0);
            mb.emplace_back(model.biases(l).size(), 0.0);
            vb.emplace_back(model.biases(l).size(), 0.0);
        }
    }

    static void update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                       std::vector<double>& v, double lr, double c1, double c2) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
            v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
        }
    }

    void apply(DetectorModel& model, const detail::ParamGrads& dw, const detail::ParamGrads& db, double lr) {
        ++step;
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
        for (std::size_t l = 0; l < dw.size(); ++l) {
            update(model.weights(l), dw[l], mw[l], vw[l], lr, c1, c2);
            update(model.biases(l), db[l], mb[l], vb[l], lr, c1, c2);
        }
    }
};

double smooth_l1(double x, double& grad) {
    const double a = std::abs(x);
    if (a < 1.0) {
        grad = x;
        return 0.5 * x * x;
    }
    grad = x > 0 ? 1.0 : -1.0;
    return a - 0.5;
}

DetectionSample flipped(const DetectionSample& s) {
    DetectionSample out = s;
    const int w = s.image.width;
    for (int y = 0; y < s.image.height; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < s.image.channels; ++c) out.image.at(x, y, c) = s.image.at(w - 1 - x, y, c);
        }
    }
    for (auto& o : out.objects) {
        const double xmin = w - o.bbox.xmax, xmax = w - o.bbox.xmin;
        o.bbox.xmin = xmin;
        o.bbox.xmax = xmax;
    }
    return out;
}

// Loss and head gradient for one image under the anchor-assignment rule.
double sample_loss(const Architecture& arch, const detail::Tensor& head, const std::vector<GroundTruth>& objects,
                   const TrainConfig& cfg, detail::Tensor& grad) {
    const int A = static_cast<int>(arch.anchors.size());
    const int V = arch.values_per_anchor();
    const int C = arch.num_classes;
    const double stride = arch.stride();
    const std::size_t n_cand = static_cast<std::size_t>(head.h) * head.w * A;

    std::vector<double> best_iou(n_cand, 0.0);
    std::vector<int> best_gt(n_cand, -1);
    std::vector<std::size_t> gt_best_cand(objects.size(), 0);
    std::vector<double> gt_best_iou(objects.size(), -1.0);
    for (int gy = 0; gy < head.h; ++gy) {
        for (int gx = 0; gx < head.w; ++gx) {
            for (int a = 0; a < A; ++a) {
                const std::size_t cand = (static_cast<std::size_t>(gy) * head.w + gx) * A + a;
                const BBox ab = detail::anchor_box(arch.anchors[a], (gx + 0.5) * stride, (gy + 0.5) * stride);
                for (std::size_t g = 0; g < objects.size(); ++g) {
                    const double o = iou(ab, objects[g].bbox);
                    if (o > best_iou[cand]) {
                        best_iou[cand] = o;
                        best_gt[cand] = static_cast<int>(g);
                    }
                    if (o > gt_best_iou[g]) {
                        gt_best_iou[g] = o;
                        gt_best_cand[g] = cand;
                    }
                }
            }
        }
    }
    // 1 positive, 0 negative, -1 ignored
    std::vector<int> label(n_cand, 0);
    for (std::size_t c = 0; c < n_cand; ++c) {
        if (best_iou[c] >= cfg.positive_iou) label[c] = 1;
        else if (best_iou[c] >= cfg.negative_iou) label[c] = -1;
    }
    for (std::size_t g = 0; g < objects.size(); ++g) {
        label[gt_best_cand[g]] = 1;
        best_gt[gt_best_cand[g]] = static_cast<int>(g);
    }
    const std::size_t n_pos = static_cast<std::size_t>(std::count(label.begin(), label.end(), 1));
    const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, n_pos));

    double loss = 0.0;
    grad = detail::Tensor(head.c, head.h, head.w);
    for (int gy = 0; gy < head.h; ++gy) {
        for (int gx = 0; gx < head.w; ++gx) {
            for (int a = 0; a < A; ++a) {
                const std::size_t cand = (static_cast<std::size_t>(gy) * head.w + gx) * A + a;
                if (label[cand] < 0) continue;
                const GroundTruth* gt = label[cand] == 1 ? &objects[best_gt[cand]] : nullptr;
                for (int c = 0; c < C; ++c) {
                    const double z = head.at(a * V + c, gy, gx);
                    const double t = (gt && gt->class_id == c) ? 1.0 : 0.0;
                    // BCE with logits, stable form
                    loss += norm * (std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z))));
                    grad.at(a * V + c, gy, gx) = norm * (detail::sigmoid(z) - t);
                }
                if (!gt) continue;
                const auto& an = arch.anchors[a];
                const double acx = (gx + 0.5) * stride, acy = (gy + 0.5) * stride;
                const double target[4] = {
                    (0.5 * (gt->bbox.xmin + gt->bbox.xmax) - acx) / an.width,
                    (0.5 * (gt->bbox.ymin + gt->bbox.ymax) - acy) / an.height,
                    std::log(gt->bbox.width() / an.width),
                    std::log(gt->bbox.height() / an.height),
                };
                for (int k = 0; k < 4; ++k) {
                    double g;
                    loss += norm * cfg.box_weight * smooth_l1(head.at(a * V + C + k, gy, gx) - target[k], g);
                    grad.at(a * V + C + k, gy, gx) = norm * cfg.box_weight * g;
                }
            }
        }
    }
    return loss;
}

double heldout_ap(const DetectorModel& model, const DetectionDataset& data, const std::vector<std::size_t>& idx) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<GroundTruth>> gts;
    for (std::size_t i : idx) {
        dets.push_back(detect(model, data[i].image));
        gts.push_back(data[i].objects);
    }
    try {
        return ap_at_05(dets, gts, kTargetClass);
    } catch (const InvalidParameter&) {
        return 0.0;
    }
}

}  // namespace

TrainResult train_toy_detector(const DetectionDataset& dataset, const TrainConfig& cfg) {
    return train_detector(dataset, toy_architecture(), cfg);
}

TrainResult train_detector(const DetectionDataset& dataset, const Architecture& arch, const TrainConfig& cfg) {
    if (dataset.size() < kMinSamples) {
        throw PreconditionError("detector training needs at least " + std::to_string(kMinSamples) +
                                " labeled images, got " + std::to_string(dataset.size()));
    }
    if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
        throw InvalidParameter("train config: epochs, batch_size and learning_rate must be positive");
    }
    for (const auto& s : dataset) detail::check_input(arch, s.image);

    std::vector<std::size_t> train_idx, hold_idx;
    const bool flagged = std::any_of(dataset.begin(), dataset.end(), [](const auto& s) { return s.holdout; });
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const bool hold = flagged ? dataset[i].holdout : (cfg.holdout_every > 0 && i % cfg.holdout_every == 0);
        (hold ? hold_idx : train_idx).push_back(i);
    }
    if (hold_idx.empty() || train_idx.empty()) throw PreconditionError("dataset split left an empty train or held-out set");

    DetectorModel model(arch);
    model.initialize(cfg.seed);
    Adam adam(model);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    TrainResult best{model, {}};
    best.report.heldout_ap = -1.0;
    TrainReport report;

    detail::ParamGrads dw, db;
    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
        dw.emplace_back(model.weights(l).size(), 0.0);
        db.emplace_back(model.biases(l).size(), 0.0);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        std::shuffle(order.begin(), order.end(), rng);
        std::uniform_int_distribution<int> coin(0, 1);
        double epoch_loss = 0.0;
        // cosine decay to 5% of the base rate
        const double progress = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 0.0;
        const double lr = cfg.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(3.141592653589793 * progress)));
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            for (auto& v : dw) std::fill(v.begin(), v.end(), 0.0);
            for (auto& v : db) std::fill(v.begin(), v.end(), 0.0);
            const double scale = 1.0 / static_cast<double>(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const bool flip = cfg.horizontal_flip && coin(rng) == 1;
                const DetectionSample sample = flip ? flipped(dataset[order[b]]) : dataset[order[b]];
                detail::ForwardTrace trace;
                detail::forward(model, detail::image_to_tensor(sample.image), trace);
                detail::Tensor g;
                epoch_loss += sample_loss(arch, trace.output, sample.objects, cfg, g);
                for (double& v : g.v) v *= scale;
                detail::backward(model, trace, g, &dw, &db, false);
            }
            adam.apply(model, dw, db, lr);
        }
        report.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
        const double ap = heldout_ap(model, dataset, hold_idx);
        report.epoch_heldout_ap.push_back(ap);
        report.epochs_run = epoch + 1;
        if (ap > best.report.heldout_ap) {
            best.model = model;
            best.report.heldout_ap = ap;
        }
        if (epoch + 1 >= cfg.min_epochs && ap >= cfg.early_stop_ap) break;
    }

    const double best_ap = best.report.heldout_ap;
    report.heldout_ap = best_ap;
    report.reached_target = best_ap >= cfg.required_ap;
    std::ostringstream msg;
    msg << "held-out AP@0.5 " << best_ap << " after " << report.epochs_run << " epochs";
    if (!report.reached_target) msg << "; training failed to reach the required " << cfg.required_ap;
    report.message = msg.str();
    best.report = std::move(report);
    return best;
}

void save_detection_dataset(const DetectionDataset& dataset, const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory);
    nlohmann::json manifest;
    manifest["samples"] = nlohmann::json::array();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.png", i);
        write_png(dataset[i].image, directory / name);
        nlohmann::json s{{"image", name}, {"holdout", dataset[i].holdout}, {"objects", nlohmann::json::array()}};
        for (const auto& o : dataset[i].objects) {
            s["objects"].push_back({{"box", {o.bbox.xmin, o.bbox.ymin, o.bbox.xmax, o.bbox.ymax}}, {"class_id", o.class_id}});
        }
        manifest["samples"].push_back(std::move(s));
    }
    std::ofstream out(directory / "manifest.json");
    out << manifest.dump(1) << '\n';
}

DetectionDataset load_detection_dataset(const std::filesystem::path& directory) {
    std::ifstream in(directory / "manifest.json");
    if (!in) throw std::runtime_error("cannot open " + (directory / "manifest.json").string());
    const auto manifest = nlohmann::json::parse(in);
    DetectionDataset data;
    std::size_t i = 0;
    for (const auto& s : manifest.at("samples")) {
        try {
            DetectionSample sample;
            sample.image = read_png(directory / s.at("image").get<std::string>());
            sample.holdout = s.value("holdout", false);
            for (const auto& o : s.at("objects")) {
                const auto& b = o.at("box");
                sample.objects.push_back({{b.at(0), b.at(1), b.at(2), b.at(3)}, o.at("class_id")});
            }
            data.push_back(std::move(sample));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad dataset manifest entry: ") + e.what(), ParseError::Location::Record, i);
        }
        ++i;
    }
    return data;
}

}  // namespace pga
