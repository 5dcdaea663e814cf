#include "pga/attack.hpp"
#include "pga/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace pga {

// ---- views ------------------------------------------------------------------------------

Image ViewState::detect_image() const { return composite_detect_image(render.rgb, original, mask); }

ViewState prepare_view(const GaussianScene& original_scene, const GaussianScene& current, const CameraView& camera,
                       const GroundTruth& gt, double mask_threshold) {
    ViewState v;
    v.camera = camera;
    v.gt = gt;
    const RenderOutput clean = render(original_scene, camera);
    v.original = clean.rgb;
    v.mask = mask_from_object_alpha(clean.object_alpha, mask_threshold);
    refresh_view(v, current);
    return v;
}

void refresh_view(ViewState& view, const GaussianScene& current) {
    RenderOptions opts;
    opts.record_trace = true;
    view.render = render(current, view.camera, opts);
}

std::optional<GroundTruth> ground_truth_from_mask(const Mask& mask, int class_id) {
    int xmin = mask.width, ymin = mask.height, xmax = -1, ymax = -1;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            xmin = std::min(xmin, x);
            ymin = std::min(ymin, y);
            xmax = std::max(xmax, x);
            ymax = std::max(ymax, y);
        }
    }
    if (xmax < 0) return std::nullopt;
    return GroundTruth{{double(xmin), double(ymin), double(xmax + 1), double(ymax + 1)}, class_id};
}

bool target_detected(const DetectorModel& detector, const Image& image, const GroundTruth& gt,
                     const SuccessCriteria& success) {
    for (const auto& d : detect(detector, image)) {
        if (d.class_id == gt.class_id && d.confidence >= success.confidence && iou(d.bbox, gt.bbox) >= success.iou) {
            return true;
        }
    }
    return false;
}

// ---- background maximization ------------------------------------------------------------

double BackgroundPerturbation::linf() const {
    double m = 0.0;
    for (double v : sigma.data) m = std::max(m, std::abs(v));
    return m;
}

namespace {

Image add_background(const Image& image, const Image& sigma, const Mask& mask) {
    Image out = image;
    for (std::size_t p = 0; p < image.pixel_count(); ++p) {
        if (mask.data[p]) continue;
        for (int c = 0; c < 3; ++c) out.data[p * 3 + c] += sigma.data[p * 3 + c];
    }
    return out;
}

}  // namespace

BackgroundPerturbation background_maximize(const ViewState& view, const DetectorModel& detector,
                                           const GroundTruth& gt, const AttackConfig& cfg, const SigmaHook& hook) {
    const Image base = view.detect_image();
    BackgroundPerturbation bp;
    bp.sigma = Image(base.width, base.height, 3);
    const LossSelector selector = detection_loss_selector(gt);

    for (int step = 0; step < cfg.bg_steps; ++step) {
        const InputGradient ig = input_gradient(detector, add_background(base, bp.sigma, view.mask), selector);
        if (step == 0) bp.loss_before = ig.loss;
        for (std::size_t p = 0; p < base.pixel_count(); ++p) {
            for (int c = 0; c < 3; ++c) {
                double& s = bp.sigma.data[p * 3 + c];
                if (view.mask.data[p]) {
                    s = 0.0;
                    continue;
                }
                const double g = ig.gradient.data[p * 3 + c];
                const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
                s = std::clamp(s + cfg.bg_step_size * sign, -cfg.epsilon, cfg.epsilon);
            }
        }
        bp.steps = step + 1;
        if (hook) hook(bp, view.mask, cfg.epsilon);
        const Image perturbed = add_background(base, bp.sigma, view.mask);
        if (target_detected(detector, perturbed, gt, cfg.success)) {
            bp.stopped_early = step + 1 < cfg.bg_steps;
            break;
        }
    }
    const Image final_image = add_background(base, bp.sigma, view.mask);
    bp.loss_after = detection_loss(detect_raw(detector, final_image).candidates, gt).value;
    if (bp.steps == 0) bp.loss_before = bp.loss_after;
    return bp;
}

// ---- total loss -------------------------------------------------------------------------

TotalLoss total_loss(const ViewState& view, const GaussianScene& scene, const DetectorModel& detector,
                     const GroundTruth& gt, const std::vector<Vec3>& palette, const PrintableColorSet& printable,
                     std::span<const double> k0_ori, const Image& sigma, const TransformSample& t,
                     const AttackConfig& cfg) {
    const Image idet = view.detect_image();
    if (!sigma.same_shape(idet)) throw InvalidParameter("total_loss: sigma does not match the view size");
    const Image x = add_background(idet, sigma, view.mask);
    const Image y = eot_apply(x, t);
    GroundTruth gt_t = gt;
    gt_t.bbox = eot_box(gt.bbox, t, x.width, x.height);

    TotalLoss out;
    const InputGradient ig = input_gradient(detector, y, detection_loss_selector(gt_t));
    out.breakdown.detection = ig.loss;
    Image d_idet = eot_backward(x, t, ig.gradient);

    Image g_nps, g_clr;
    out.breakdown.nps = nps(idet, view.mask, printable, &g_nps);
    out.breakdown.color = color_regularizer(idet, view.mask, palette, &g_clr);
    const std::vector<double> k0 = zero_order_snapshot(scene);
    std::vector<double> g_anchor;
    out.breakdown.anchor = anchor_regularizer(k0, k0_ori, &g_anchor);
    out.breakdown.total =
        out.breakdown.detection + cfg.lambda * (out.breakdown.nps + out.breakdown.color + out.breakdown.anchor);

    // Only I_r inside M depends on the coefficients.
    Image d_ir(idet.width, idet.height, 3);
    for (std::size_t p = 0; p < idet.pixel_count(); ++p) {
        if (!view.mask.data[p]) continue;
        for (int c = 0; c < 3; ++c) {
            const std::size_t i = p * 3 + c;
            d_ir.data[i] = d_idet.data[i] + cfg.lambda * (g_nps.data[i] + g_clr.data[i]);
        }
    }
    const std::vector<Vec3> gk = backward_color_gradient(view.render, view.camera, scene, d_ir);
    out.grad_k0.resize(k0.size());
    for (std::size_t i = 0; i < gk.size(); ++i) {
        for (int c = 0; c < 3; ++c) out.grad_k0[3 * i + c] = gk[i][c] + cfg.lambda * g_anchor[3 * i + c];
    }
    return out;
}

TotalLoss total_loss(const ViewState& view, const GaussianScene& scene, const DetectorModel& detector,
                     const GroundTruth& gt, const std::vector<Vec3>& palette, const PrintableColorSet& printable,
                     std::span<const double> k0_ori, const Image& sigma, std::mt19937_64& rng,
                     const AttackConfig& cfg) {
    const TransformSample t = cfg.eot.enabled ? eot_sample(rng, cfg.eot, view.camera.width(), view.camera.height())
                                              : TransformSample::identity();
    return total_loss(view, scene, detector, gt, palette, printable, k0_ori, sigma, t, cfg);
}

// ---- log --------------------------------------------------------------------------------

const char* to_string(LogEvent e) {
    switch (e) {
        case LogEvent::Header: return "header";
        case LogEvent::ViewStart: return "view_start";
        case LogEvent::Skip: return "skip";
        case LogEvent::Background: return "background";
        case LogEvent::Iteration: return "iteration";
        case LogEvent::NonFinite: return "non_finite_gradient";
        case LogEvent::Success: return "success";
        case LogEvent::ViewError: return "view_error";
        case LogEvent::ViewEnd: return "view_end";
        case LogEvent::Done: return "done";
    }
    return "unknown";
}

void AttackLog::append(LogRecord record) {
    record.seq = records_.size();
    records_.push_back(std::move(record));
}

std::size_t AttackLog::count(LogEvent e) const {
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [e](const LogRecord& r) { return r.event == e; }));
}

void AttackLog::write_ndjson(std::ostream& out) const {
    for (const auto& r : records_) {
        nlohmann::ordered_json j;
        j["seq"] = r.seq;
        j["event"] = to_string(r.event);
        if (r.epoch >= 0) j["epoch"] = r.epoch;
        if (r.view >= 0) j["view"] = r.view;
        if (r.iteration >= 0) j["iteration"] = r.iteration;
        if (r.losses) {
            j["l_det"] = r.losses->detection;
            j["nps"] = r.losses->nps;
            j["l_clr"] = r.losses->color;
            j["anchor"] = r.losses->anchor;
            j["l_total"] = r.losses->total;
        }
        if (r.sigma_linf) j["sigma_linf"] = *r.sigma_linf;
        if (r.bg_steps) j["bg_steps"] = *r.bg_steps;
        if (r.success) j["success"] = *r.success;
        if (!r.message.empty()) j["message"] = r.message;
        if (!r.data_json.empty()) j["data"] = nlohmann::ordered_json::parse(r.data_json);
        out << j.dump() << '\n';
    }
}

std::string AttackLog::to_ndjson() const {
    std::ostringstream ss;
    write_ndjson(ss);
    return ss.str();
}

// ---- camouflage step --------------------------------------------------------------------

bool camouflage_step(GaussianScene& scene, std::span<const double> grad_k0, const AttackConfig& cfg, AttackLog* log) {
    ZeroOrderView view(scene);
    if (grad_k0.size() != view.coefficient_count()) {
        throw InvalidParameter("camouflage_step: gradient has " + std::to_string(grad_k0.size()) + " entries for " +
                               std::to_string(view.coefficient_count()) + " coefficients");
    }
    for (std::size_t i = 0; i < grad_k0.size(); ++i) {
        if (!std::isfinite(grad_k0[i])) {
            if (log) {
                LogRecord r;
                r.event = LogEvent::NonFinite;
                r.message = "non-finite gradient at coefficient " + std::to_string(i) + "; step aborted";
                log->append(std::move(r));
            }
            return false;
        }
    }
    for (std::size_t i = 0; i < view.size(); ++i) {
        const Vec3 g{grad_k0[3 * i], grad_k0[3 * i + 1], grad_k0[3 * i + 2]};
        view.set(i, view.get(i) - cfg.eta * g);
    }
    return true;
}

// ---- run --------------------------------------------------------------------------------

std::vector<Vec3> background_pixels(const GaussianScene& scene, const std::vector<CameraView>& views,
                                    double mask_threshold) {
    std::vector<Vec3> px;
    for (const auto& cam : views) {
        const RenderOutput r = render(scene, cam);
        const Mask m = mask_from_object_alpha(r.object_alpha, mask_threshold);
        for (std::size_t p = 0; p < r.rgb.pixel_count(); ++p) {
            if (!m.data[p]) px.emplace_back(r.rgb.data[p * 3], r.rgb.data[p * 3 + 1], r.rgb.data[p * 3 + 2]);
        }
    }
    return px;
}

AttackResult run_attack(const GaussianScene& scene, const std::vector<CameraView>& views,
                        const DetectorModel& detector, const std::vector<GroundTruth>& gt_per_view,
                        const AttackConfig& cfg, const AttackInputs& inputs) {
    cfg.validate();
    if (views.empty()) throw PreconditionError("run_attack: no views");
    if (gt_per_view.size() != views.size()) throw InvalidParameter("run_attack: one ground truth per view required");
    if (scene.object_count() == 0) throw PreconditionError("run_attack: scene has no object Gaussians");

    AttackResult result;
    result.scene = scene;
    result.iterations_per_view.assign(views.size(), 0);
    result.palette = inputs.palette ? *inputs.palette
                                    : build_palette(background_pixels(scene, views, cfg.mask_threshold), cfg.palette_k,
                                                    cfg.rng_seed);
    const PrintableColorSet printable = inputs.printable.empty() ? default_printable_colors() : inputs.printable;
    const std::vector<double> k0_ori = zero_order_snapshot(scene);
    std::mt19937_64 rng(cfg.rng_seed);
    AttackLog& log = result.log;

    {
        nlohmann::ordered_json data;
        data["config"] = nlohmann::ordered_json::parse(attack_config_to_json(cfg, -1));
        data["views"] = views.size();
        data["object_gaussians"] = scene.object_count();
        for (const auto& c : result.palette.colors) data["palette"].push_back({c[0], c[1], c[2]});
        data["printable_colors"] = printable.size();
        LogRecord h;
        h.event = LogEvent::Header;
        h.data_json = data.dump();
        log.append(std::move(h));
    }

    std::vector<std::optional<ViewState>> cache(views.size());
    for (int epoch = 0; epoch < cfg.outer_epochs; ++epoch) {
        for (std::size_t vi = 0; vi < views.size(); ++vi) {
            const int v = static_cast<int>(vi);
            try {
                const GroundTruth& gt = gt_per_view[vi];
                if (!cache[vi]) cache[vi] = prepare_view(scene, result.scene, views[vi], gt, cfg.mask_threshold);
                else refresh_view(*cache[vi], result.scene);
                ViewState& view = *cache[vi];

                if (!target_detected(detector, view.detect_image(), gt, cfg.success)) {
                    LogRecord r;
                    r.event = LogEvent::Skip;
                    r.epoch = epoch;
                    r.view = v;
                    r.message = "already attacked; remaining iterations skipped";
                    log.append(std::move(r));
                    continue;
                }
                LogRecord sr0;
                sr0.event = LogEvent::ViewStart;
                sr0.epoch = epoch;
                sr0.view = v;
                log.append(std::move(sr0));

                int iters = 0;
                bool success = false;
                for (int it = 0; it < cfg.inner_iters_per_view; ++it) {
                    BackgroundPerturbation bp;
                    if (cfg.min_max) {
                        bp = background_maximize(view, detector, gt, cfg, inputs.hooks.on_sigma);
                    } else {
                        bp.sigma = Image(view.camera.width(), view.camera.height(), 3);
                    }
                    LogRecord br;
                    br.event = LogEvent::Background;
                    br.epoch = epoch;
                    br.view = v;
                    br.iteration = it;
                    br.sigma_linf = bp.linf();
                    br.bg_steps = bp.steps;
                    if (cfg.min_max) {
                        std::ostringstream d;
                        d << nlohmann::json{{"l_det_before", bp.loss_before}, {"l_det_after", bp.loss_after}}.dump();
                        br.data_json = d.str();
                    }
                    log.append(std::move(br));

                    const TotalLoss tl = total_loss(view, result.scene, detector, gt, result.palette.colors,
                                                    printable, k0_ori, bp.sigma, rng, cfg);
                    LogRecord ir;
                    ir.event = LogEvent::Iteration;
                    ir.epoch = epoch;
                    ir.view = v;
                    ir.iteration = it;
                    ir.losses = tl.breakdown;
                    ir.sigma_linf = bp.linf();
                    log.append(std::move(ir));

                    if (!camouflage_step(result.scene, tl.grad_k0, cfg)) {
                        LogRecord nr;
                        nr.event = LogEvent::NonFinite;
                        nr.epoch = epoch;
                        nr.view = v;
                        nr.iteration = it;
                        nr.message = "non-finite gradient; step aborted";
                        log.append(std::move(nr));
                        break;
                    }
                    ++iters;
                    if (inputs.hooks.on_step) inputs.hooks.on_step(epoch, v, result.scene);
                    refresh_view(view, result.scene);
                    if (!target_detected(detector, view.detect_image(), gt, cfg.success)) {
                        success = true;
                        LogRecord sr;
                        sr.event = LogEvent::Success;
                        sr.epoch = epoch;
                        sr.view = v;
                        sr.iteration = it;
                        sr.success = true;
                        log.append(std::move(sr));
                        break;
                    }
                }
                result.iterations_per_view[vi] += iters;
                LogRecord er;
                er.event = LogEvent::ViewEnd;
                er.epoch = epoch;
                er.view = v;
                er.iteration = iters;
                er.success = success;
                log.append(std::move(er));
            } catch (const std::exception& e) {
                LogRecord r;
                r.event = LogEvent::ViewError;
                r.epoch = epoch;
                r.view = v;
                r.message = e.what();
                log.append(std::move(r));
            }
        }
    }
    LogRecord done;
    done.event = LogEvent::Done;
    log.append(std::move(done));
    return result;
}

}  // namespace pga
