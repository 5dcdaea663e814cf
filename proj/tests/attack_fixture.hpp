#pragma once

// Small scene + camera + detector used by the attack tests and the acceptance gradient check.

#include "pga/attack.hpp"
#include "pga/camera.hpp"
#include "pga/renderer.hpp"

#include <random>

namespace fixture {

struct AttackSetup {
    pga::GaussianScene scene;
    pga::CameraView camera;
    pga::DetectorModel detector;
    pga::GroundTruth gt;
};

// `count` Gaussians, half of them a reddish object blob at the origin and the rest a ring of
// ground splats; detector weights drawn at random with neutral class bias.
inline AttackSetup small_setup(std::size_t count, std::uint64_t seed) {
    using pga::Vec3;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AttackSetup s;
    s.scene.sh_degree = 3;
    s.scene.background_color = {0.6, 0.7, 0.9};
    for (std::size_t i = 0; i < count; ++i) {
        pga::Gaussian3D g;
        const bool object = i % 2 == 0;
        g.is_object = object;
        if (object) {
            g.mean = Vec3(1.6 * u(rng) - 0.8, 1.0 * u(rng) - 0.5, 0.6 * u(rng) - 0.3);
            g.scale = Vec3(0.25 + 0.2 * u(rng), 0.25 + 0.2 * u(rng), 0.1 + 0.1 * u(rng));
        } else {
            const double a = 6.283185307179586 * u(rng), r = 1.2 + 1.5 * u(rng);
            g.mean = Vec3(r * std::cos(a), r * std::sin(a), -0.4);
            g.scale = Vec3(0.4 + 0.3 * u(rng), 0.4 + 0.3 * u(rng), 0.05);
        }
        std::normal_distribution<double> n(0.0, 1.0);
        g.rotation = pga::Vec4(n(rng), n(rng), n(rng), n(rng)).normalized();
        g.opacity = 0.6 + 0.35 * u(rng);
        g.sh.assign(48, 0.0);
        const Vec3 base = object ? Vec3(0.7, 0.2, 0.15) : Vec3(0.3, 0.45, 0.25);
        for (int c = 0; c < 3; ++c) g.sh[c] = (base[c] + 0.1 * (u(rng) - 0.5) - 0.5) / pga::kShC0;
        for (std::size_t k = 3; k < g.sh.size(); ++k) g.sh[k] = 0.02 * (u(rng) - 0.5);
        s.scene.gaussians.push_back(g);
    }
    s.camera = pga::make_viewpoint(Vec3::Zero(), 6.0, 35.0, 30.0, {56, 56, 32, 32, 64, 64});
    s.detector = pga::DetectorModel(pga::toy_architecture());
    s.detector.initialize(seed + 1, 0.0);
    s.gt = *pga::ground_truth_from_mask(pga::render_object_mask(s.scene, s.camera, 0.5));
    return s;
}

// Raises every class logit so that the target counts as detected in every cell.
inline void make_eager(pga::DetectorModel& det, double bias = 3.0) {
    const auto& arch = det.architecture();
    auto& b = det.biases(arch.layers.size() - 1);
    for (std::size_t a = 0; a < arch.anchors.size(); ++a) {
        for (int c = 0; c < arch.num_classes; ++c) b[a * arch.values_per_anchor() + c] = bias;
    }
}

}  // namespace fixture
