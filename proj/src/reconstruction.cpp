#include "pga/reconstruction.hpp"

#include "pga/errors.hpp"
#include "pga/renderer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace pga {
namespace {

constexpr double kOpacityEps = 1e-6;

double clamp_opacity(double a) { return std::clamp(a, kOpacityEps, 1.0 - kOpacityEps); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double a) { return std::log(a / (1.0 - a)); }

double binary_entropy(double alpha) {
    const double a = clamp_opacity(alpha);
    return -(a * std::log(a) + (1.0 - a) * std::log(1.0 - a));
}

// Indices (min, median) of a 3-vector; ties resolve to the lower index.
std::pair<int, int> min_median(const Vec3& s) {
    std::array<int, 3> idx{0, 1, 2};
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s[a] < s[b]; });
    return {idx[0], idx[1]};
}

struct Gradients {
    std::vector<double> sh;       // same layout as the scene, concatenated
    std::vector<double> opacity;  // d/d(opacity), not yet chained to the logit
    std::vector<Vec3> log_scale;

    explicit Gradients(const GaussianScene& s)
        : sh(s.size() * 3 * sh_basis_count(s.sh_degree), 0.0), opacity(s.size(), 0.0), log_scale(s.size(), Vec3::Zero()) {}

    void add(const Gradients& o) {
        for (std::size_t i = 0; i < sh.size(); ++i) sh[i] += o.sh[i];
        for (std::size_t i = 0; i < opacity.size(); ++i) opacity[i] += o.opacity[i];
    }
};

// Photometric loss of one image and its gradient (into `grad`, which must be zeroed).
double photometric_term(const PosedImage& view, const GaussianScene& scene, double weight, Gradients& grad) {
    const RenderOutput out = render(scene, view.camera, {.record_trace = true});
    if (!out.rgb.same_shape(view.image)) throw InvalidParameter("posed image size does not match its camera");
    const double n = static_cast<double>(out.rgb.data.size());

    Image dpix(out.rgb.width, out.rgb.height, 3);
    double sse = 0.0;
    for (std::size_t i = 0; i < dpix.data.size(); ++i) {
        const double r = out.rgb.data[i] - view.image.data[i];
        sse += r * r;
        dpix.data[i] = weight * 2.0 * r / n;
    }

    // colour -> SH
    const auto dcolor = backward_color(out, dpix, scene.size());
    const int basis = sh_basis_count(scene.sh_degree);
    const Vec3 eye = view.camera.position();
    std::array<double, 16> Y{};
    std::vector<Vec3> colors(scene.size(), Vec3::Zero());
    for (const auto& s : out.splats) {
        const auto& g = scene.gaussians[s.source_index];
        colors[s.source_index] = s.color;
        eval_sh_basis((g.mean - eye).normalized(), scene.sh_degree, Y);
        for (int ch = 0; ch < 3; ++ch) {
            if (s.raw_color[ch] < 0.0 || s.raw_color[ch] > 1.0) continue;
            for (int k = 0; k < basis; ++k) {
                grad.sh[s.source_index * 3 * basis + 3 * k + ch] += dcolor[s.source_index][ch] * Y[k];
            }
        }
    }

    // opacity: per pixel, walk contributions back to front carrying the colour behind each splat
    const auto& entries = out.trace->entries;
    const std::size_t npix = out.rgb.pixel_count();
    std::vector<std::uint32_t> start(npix + 1, 0);
    for (const auto& c : entries) ++start[c.pixel + 1];
    for (std::size_t p = 0; p < npix; ++p) start[p + 1] += start[p];
    std::vector<std::uint32_t> order(entries.size());
    {
        std::vector<std::uint32_t> fill(start.begin(), start.end() - 1);
        for (std::uint32_t e = 0; e < entries.size(); ++e) order[fill[entries[e].pixel]++] = e;
    }
    for (std::size_t p = 0; p < npix; ++p) {
        const Vec3 g{dpix.data[3 * p], dpix.data[3 * p + 1], dpix.data[3 * p + 2]};
        double behind = out.trace->final_transmittance[p] * scene.background_color.dot(g);
        for (std::uint32_t k = start[p + 1]; k-- > start[p];) {
            const auto& c = entries[order[k]];
            const double cg = colors[c.source].dot(g);
            const double dalpha = cg * c.transmittance - behind / (1.0 - c.alpha);
            behind += cg * c.alpha * c.transmittance;
            if (c.alpha_clamped) continue;
            const double o = scene.gaussians[c.source].opacity;
            if (o > 0.0) grad.opacity[c.source] += dalpha * c.alpha / o;
        }
    }
    return weight * sse / n;
}

double regularizer_term(const GaussianScene& scene, const FitConfig& cfg, Gradients* grad) {
    const ConsistencyTerms t = consistency_regularizers(scene);
    if (grad && !scene.gaussians.empty()) {
        const double inv_n = 1.0 / static_cast<double>(scene.size());
        for (std::size_t i = 0; i < scene.size(); ++i) {
            const auto& g = scene.gaussians[i];
            if (cfg.w_opacity > 0.0) {
                const double a = clamp_opacity(g.opacity);
                grad->opacity[i] += cfg.w_opacity * inv_n * -std::log(a / (1.0 - a));
            }
            if (cfg.w_flat > 0.0) {
                const auto [lo, mid] = min_median(g.scale);
                const double smin = g.scale[lo], smed = g.scale[mid];
                // d/dlog(s) = s * d/ds
                grad->log_scale[i][lo] += cfg.w_flat * inv_n * smin / smed;
                grad->log_scale[i][mid] += cfg.w_flat * inv_n * -smin / smed;
            }
        }
    }
    return cfg.w_opacity * t.opacity + cfg.w_flat * t.flat;
}

double objective(std::span<const PosedImage> images, const GaussianScene& scene, const FitConfig& cfg,
                 Gradients* grad) {
    double loss = 0.0;
    for (const auto& view : images) {
        Gradients local(scene);
        loss += photometric_term(view, scene, cfg.photometric_weight, local);
        if (grad) grad->add(local);
    }
    return loss + regularizer_term(scene, cfg, grad);
}

void validate_config(const FitConfig& cfg) {
    if (cfg.iterations < 0) throw InvalidParameter("fit: iterations must be >= 0");
    if (cfg.w_opacity < 0.0 || cfg.w_flat < 0.0) throw InvalidParameter("fit: regularizer weights must be >= 0");
    if (cfg.photometric_weight < 0.0) throw InvalidParameter("fit: photometric weight must be >= 0");
}

}  // namespace

ConsistencyTerms consistency_regularizers(const GaussianScene& scene) {
    ConsistencyTerms t;
    if (scene.gaussians.empty()) return t;
    for (const auto& g : scene.gaussians) {
        t.opacity += binary_entropy(g.opacity);
        const auto [lo, mid] = min_median(g.scale);
        t.flat += g.scale[lo] / g.scale[mid];
    }
    t.opacity /= static_cast<double>(scene.size());
    t.flat /= static_cast<double>(scene.size());
    return t;
}

double fit_objective(std::span<const PosedImage> images, const GaussianScene& scene, const FitConfig& cfg) {
    return objective(images, scene, cfg, nullptr);
}

FitResult fit_scene(std::span<const PosedImage> images, const GaussianScene& init, const FitConfig& cfg) {
    validate_config(cfg);
    if (images.empty()) throw PreconditionError("fit_scene needs at least one posed image");
    if (init.gaussians.empty()) throw PreconditionError("fit_scene needs a non-empty initial scene");
    init.validate();

    if (cfg.iterations == 0) return {init, objective(images, init, cfg, nullptr)};

    GaussianScene scene = init;
    const int ncoef = 3 * sh_basis_count(scene.sh_degree);
    std::vector<double> opacity_logit(scene.size());
    std::vector<Vec3> log_scale(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        opacity_logit[i] = logit(clamp_opacity(scene.gaussians[i].opacity));
        scene.gaussians[i].opacity = sigmoid(opacity_logit[i]);
        log_scale[i] = scene.gaussians[i].scale.array().log();
    }

    for (int it = 0; it < cfg.iterations; ++it) {
        Gradients grad(scene);
        objective(images, scene, cfg, &grad);
        for (std::size_t i = 0; i < scene.size(); ++i) {
            auto& g = scene.gaussians[i];
            for (int k = 0; k < ncoef; ++k) g.sh[k] -= cfg.lr_sh * grad.sh[i * ncoef + k];
            const double a = g.opacity;
            opacity_logit[i] -= cfg.lr_opacity * grad.opacity[i] * a * (1.0 - a);
            g.opacity = sigmoid(opacity_logit[i]);
            if (cfg.w_flat > 0.0) {
                log_scale[i] -= cfg.lr_scale * grad.log_scale[i];
                g.scale = log_scale[i].array().exp();
            }
        }
    }
    return {scene, objective(images, scene, cfg, nullptr)};
}

GaussianScene random_init_scene(const Vec3& box_min, const Vec3& box_max, std::size_t count, int sh_degree,
                                std::uint64_t seed) {
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw InvalidParameter("sh_degree must be in [0, 3]");
    if ((box_max.array() <= box_min.array()).any()) throw InvalidParameter("random_init_scene: empty box");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    const double extent = (box_max - box_min).norm();
    GaussianScene scene;
    scene.sh_degree = sh_degree;
    for (std::size_t i = 0; i < count; ++i) {
        Gaussian3D g;
        for (int a = 0; a < 3; ++a) g.mean[a] = box_min[a] + u(rng) * (box_max[a] - box_min[a]);
        g.scale = Vec3::Constant(0.05 * extent / std::cbrt(static_cast<double>(std::max<std::size_t>(count, 1))) + 1e-3);
        g.rotation = normalized_quaternion(Vec4(n(rng), n(rng), n(rng), n(rng)));
        g.opacity = 0.5;
        g.sh.assign(3 * sh_basis_count(sh_degree), 0.0);
        scene.gaussians.push_back(std::move(g));
    }
    return scene;
}

std::vector<PosedImage> load_posed_images(const std::filesystem::path& directory) {
    std::ifstream in(directory / "manifest.json");
    if (!in) throw std::runtime_error("cannot open '" + (directory / "manifest.json").string() + "'");
    const auto manifest = nlohmann::json::parse(in);
    std::vector<PosedImage> out;
    for (const auto& entry : manifest.at("images")) {
        PosedImage view;
        view.image = read_png(directory / entry.at("file").get<std::string>());
        const auto& c = entry.at("camera");
        auto& k = view.camera.intrinsics;
        k.fx = c.at("fx");
        k.fy = c.at("fy");
        k.cx = c.at("cx");
        k.cy = c.at("cy");
        k.width = c.at("width");
        k.height = c.at("height");
        const auto r = c.at("rotation").get<std::vector<double>>();
        const auto t = c.at("translation").get<std::vector<double>>();
        if (r.size() != 9 || t.size() != 3) throw InvalidParameter("manifest camera pose has wrong arity");
        for (int i = 0; i < 9; ++i) view.camera.rotation(i / 3, i % 3) = r[i];
        view.camera.translation = {t[0], t[1], t[2]};
        view.camera.validate();
        if (view.image.channels != 3) throw InvalidParameter("posed images must be RGB");
        out.push_back(std::move(view));
    }
    return out;
}

void save_posed_images(std::span<const PosedImage> images, const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory);
    nlohmann::json manifest;
    manifest["images"] = nlohmann::json::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%03zu.png", i);
        write_png(images[i].image, directory / name);
        const auto& cam = images[i].camera;
        std::vector<double> r(9);
        for (int j = 0; j < 9; ++j) r[j] = cam.rotation(j / 3, j % 3);
        manifest["images"].push_back({{"file", name},
                                      {"camera",
                                       {{"fx", cam.intrinsics.fx},
                                        {"fy", cam.intrinsics.fy},
                                        {"cx", cam.intrinsics.cx},
                                        {"cy", cam.intrinsics.cy},
                                        {"width", cam.intrinsics.width},
                                        {"height", cam.intrinsics.height},
                                        {"rotation", r},
                                        {"translation", {cam.translation.x(), cam.translation.y(), cam.translation.z()}}}}});
    }
    std::ofstream(directory / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace pga
