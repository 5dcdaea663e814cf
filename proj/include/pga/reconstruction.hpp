#pragma once

#include "pga/camera.hpp"
#include "pga/image.hpp"
#include "pga/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace pga {

struct PosedImage {
    Image image;  // H x W x 3, values in [0, 1]
    CameraView camera;
};

struct FitConfig {
    int iterations = 200;
    double lr_sh = 20.0;       // all SH coefficients
    double lr_opacity = 5.0;   // opacity logits
    double lr_scale = 0.01;    // log scales
    double w_opacity = 0.0;    // binary-entropy opacity regularizer
    double w_flat = 0.0;       // min/median scale regularizer
    double photometric_weight = 1.0;
    std::uint64_t rng_seed = 0;
};

struct FitResult {
    GaussianScene scene;
    double final_loss = 0.0;
};

/// Gradient descent on  photometric_weight * sum_images MSE(render, image)
///                     + w_opacity * L_opacity + w_flat * L_flat.
/// SH coefficients and opacities receive photometric gradients; scales move only under the
/// flatness term. Gaussian count and object flags never change.
FitResult fit_scene(std::span<const PosedImage> images, const GaussianScene& init, const FitConfig& cfg);

/// Loss of `scene` under the objective optimized by fit_scene.
double fit_objective(std::span<const PosedImage> images, const GaussianScene& scene, const FitConfig& cfg);

struct ConsistencyTerms {
    double opacity = 0.0;  // mean binary entropy of opacity
    double flat = 0.0;     // mean of min(scale) / median(scale)
};

ConsistencyTerms consistency_regularizers(const GaussianScene& scene);

/// Uniformly random Gaussians in an axis-aligned box with grey zero-order colour.
GaussianScene random_init_scene(const Vec3& box_min, const Vec3& box_max, std::size_t count, int sh_degree,
                                std::uint64_t seed);

// Posed image set on disk: a directory with manifest.json
//   {"images": [{"file": "000.png", "camera": {"fx":..,"fy":..,"cx":..,"cy":..,"width":..,"height":..,
//                "rotation": [r00, r01, ..., r22], "translation": [tx, ty, tz]}}, ...]}
// next to the PNG files it names.
std::vector<PosedImage> load_posed_images(const std::filesystem::path& directory);
void save_posed_images(std::span<const PosedImage> images, const std::filesystem::path& directory);

}  // namespace pga
