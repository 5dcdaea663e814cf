#include "pga/toy_scene.hpp"

#include "pga/attack.hpp"
#include "pga/errors.hpp"
#include "pga/renderer.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace pga {
namespace {

// Quaternion (w, x, y, z) turning +z onto `n`.
Vec4 quat_z_to(const Vec3& n) {
    const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), n.normalized());
    return Vec4(q.w(), q.x(), q.y(), q.z()).normalized();
}

Gaussian3D make_gaussian(const Vec3& mean, const Vec3& scale, const Vec4& rot, double opacity, const Vec3& color,
                         int degree, bool object, std::mt19937_64& rng, double higher_order) {
    Gaussian3D g;
    g.mean = mean;
    g.scale = scale;
    g.rotation = rot;
    g.opacity = opacity;
    g.is_object = object;
    g.sh.assign(3 * sh_basis_count(degree), 0.0);
    const Vec3 k0 = k0_for_color(color);
    for (int c = 0; c < 3; ++c) g.sh[c] = k0[c];
    std::uniform_real_distribution<double> u(-higher_order, higher_order);
    for (std::size_t i = 3; i < g.sh.size(); ++i) g.sh[i] = u(rng);
    return g;
}

}  // namespace

Vec3 k0_for_color(const Vec3& color) { return (color - Vec3::Constant(0.5)) / kShC0; }

GaussianScene make_toy_scene(const ToySceneParams& p) {
    if (p.sh_degree < 0 || p.sh_degree > kMaxShDegree) throw InvalidParameter("toy scene: bad SH degree");
    std::mt19937_64 rng(p.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    GaussianScene scene;
    scene.sh_degree = p.sh_degree;
    scene.background_color = p.sky_color;

    // Ground first so the object Gaussians keep a contiguous index range at the end.
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    const double spacing = std::sqrt(std::numbers::pi * p.ground_radius * p.ground_radius /
                                     static_cast<double>(std::max<std::size_t>(1, p.ground_gaussians)));
    const Vec3 asphalt(0.32, 0.33, 0.35), grass(0.30, 0.45, 0.22);
    for (std::size_t i = 0; i < p.ground_gaussians; ++i) {
        // sunflower layout over the disc
        const double r = p.ground_radius * std::sqrt((static_cast<double>(i) + 0.5) / static_cast<double>(p.ground_gaussians));
        const double phi = golden * static_cast<double>(i);
        const double x = r * std::cos(phi) + 0.1 * spacing * (unit(rng) - 0.5);
        const double y = r * std::sin(phi) + 0.1 * spacing * (unit(rng) - 0.5);
        const bool road = std::abs(y) < 1.6;
        const Vec3 base = road ? asphalt : grass;
        const Vec3 color = (base + Vec3::Constant(0.08 * (unit(rng) - 0.5))).cwiseMax(0.0).cwiseMin(1.0);
        const double angle = std::numbers::pi * unit(rng);
        const Vec4 rot(std::cos(0.5 * angle), 0.0, 0.0, std::sin(0.5 * angle));
        scene.gaussians.push_back(make_gaussian({x, y, 0.0}, {0.6 * spacing, 0.5 * spacing, 0.02}, rot, 0.95, color,
                                                p.sh_degree, false, rng, 0.01));
    }

    // Fibonacci points on the unit sphere, stretched onto the ellipsoid.
    const Vec3& e = p.object_half_extent;
    for (std::size_t i = 0; i < p.object_gaussians; ++i) {
        const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(p.object_gaussians);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * static_cast<double>(i);
        const Vec3 s(r * std::cos(phi), r * std::sin(phi), z);
        const Vec3 pos = p.object_center + s.cwiseProduct(e);
        const Vec3 normal = s.cwiseQuotient(e.cwiseProduct(e)).normalized();
        const double area = 4.0 * std::numbers::pi * std::pow(e[0] * e[1] * e[2], 2.0 / 3.0);
        const double radius = 0.9 * std::sqrt(area / static_cast<double>(p.object_gaussians));
        const Vec3 color = z > 0.55 ? p.roof_color : p.body_color;
        scene.gaussians.push_back(make_gaussian(pos, {radius, radius, 0.03}, quat_z_to(normal), 0.9, color,
                                                p.sh_degree, true, rng, 0.02));
    }
    scene.validate();
    return scene;
}

GaussianScene recolor_background(const GaussianScene& scene, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    GaussianScene out = scene;
    const Vec3 base(unit(rng), unit(rng), unit(rng));
    const Vec3 alt(unit(rng), unit(rng), unit(rng));
    for (auto& g : out.gaussians) {
        if (g.is_object) continue;
        const Vec3 pick = unit(rng) < 0.5 ? base : alt;
        const Vec3 c = (pick + Vec3::Constant(0.1 * (unit(rng) - 0.5))).cwiseMax(0.0).cwiseMin(1.0);
        const Vec3 k0 = k0_for_color(c);
        for (int i = 0; i < 3; ++i) g.sh[i] = k0[i];
    }
    out.background_color = Vec3(unit(rng), unit(rng), unit(rng));
    return out;
}

GaussianScene recolor_object(const GaussianScene& scene, const Vec3& color) {
    GaussianScene out = scene;
    const Vec3 k0 = k0_for_color(color);
    for (auto& g : out.gaussians) {
        if (!g.is_object) continue;
        for (int i = 0; i < 3; ++i) g.sh[i] = k0[i];
    }
    return out;
}

namespace {

Vec3 random_decoy_color(std::mt19937_64& rng, const Vec3& avoid) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (;;) {
        const Vec3 c(unit(rng), unit(rng), unit(rng));
        if ((c - avoid).norm() > 0.45) return c;
    }
}

void jitter(Image& im, double contrast, double brightness) {
    for (double& v : im.data) v = std::clamp(contrast * v + brightness, 0.0, 1.0);
}

}  // namespace

DetectionDataset grid_dataset(const GaussianScene& scene, const ViewGrid& grid, bool holdout) {
    DetectionDataset out;
    for (const auto& cam : generate_view_grid(grid)) {
        const RenderOutput r = render(scene, cam);
        DetectionSample s;
        s.image = r.rgb;
        s.holdout = holdout;
        if (auto gt = ground_truth_from_mask(mask_from_object_alpha(r.object_alpha, 0.5), kTargetClass)) {
            s.objects.push_back(*gt);
        }
        out.push_back(std::move(s));
    }
    return out;
}

DetectionDataset make_toy_dataset(const GaussianScene& scene, const ToyDatasetConfig& cfg) {
    if (scene.object_count() == 0) throw PreconditionError("toy dataset: scene has no object Gaussians");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const ViewGrid grid = grid_preset("toy");
    const Vec3 body = [&] {
        Vec3 mean = Vec3::Zero();
        for (const auto& g : scene.gaussians) {
            if (g.is_object) mean += kShC0 * g.zero_order() + Vec3::Constant(0.5);
        }
        return Vec3(mean / static_cast<double>(scene.object_count()));
    }();

    DetectionDataset out;
    while (out.size() < cfg.samples) {
        const double d = cfg.min_distance + (cfg.max_distance - cfg.min_distance) * unit(rng);
        const double pitch = cfg.min_pitch + (cfg.max_pitch - cfg.min_pitch) * unit(rng);
        const double az = 360.0 * unit(rng);
        const Vec3 target = grid.target_center + Vec3(unit(rng) - 0.5, unit(rng) - 0.5, 0.0);
        const CameraView cam = make_viewpoint(target, d, pitch, az, grid.intrinsics);

        const bool decoy = unit(rng) < cfg.decoy_fraction;
        const bool recolor = unit(rng) < cfg.recolor_fraction;
        const std::uint64_t bg_seed = rng();
        const Vec3 decoy_color = random_decoy_color(rng, body);
        const double contrast = 1.0 + cfg.jitter_contrast * (2.0 * unit(rng) - 1.0);
        const double brightness = cfg.jitter_brightness * (2.0 * unit(rng) - 1.0);

        GaussianScene s = recolor ? recolor_background(scene, bg_seed) : scene;
        if (decoy) s = recolor_object(s, decoy_color);
        const RenderOutput r = render(s, cam);
        const auto gt = ground_truth_from_mask(mask_from_object_alpha(r.object_alpha, 0.5), decoy ? kDecoyClass : kTargetClass);
        if (!gt) continue;
        DetectionSample sample;
        sample.image = r.rgb;
        jitter(sample.image, contrast, brightness);
        sample.objects.push_back(*gt);
        out.push_back(std::move(sample));
    }
    if (cfg.holdout_grid) {
        for (auto& s : grid_dataset(scene, grid, true)) out.push_back(std::move(s));
    }
    return out;
}

}  // namespace pga
