#pragma once

#include "pga/detector.hpp"
#include "pga/evaluate.hpp"
#include "pga/scene.hpp"

#include <cstdint>

namespace pga {

struct ToySceneParams {
    std::size_t object_gaussians = 200;
    std::size_t ground_gaussians = 300;
    Vec3 object_center{0.0, 0.0, 0.65};
    Vec3 object_half_extent{2.0, 0.9, 0.6};
    double ground_radius = 5.5;
    Vec3 body_color{0.78, 0.12, 0.10};
    Vec3 roof_color{0.35, 0.05, 0.05};
    Vec3 sky_color{0.6, 0.75, 0.9};
    int sh_degree = 3;
    std::uint64_t seed = 1;
};

/// Vehicle-sized ellipsoid shell of object Gaussians on a disc of flat ground Gaussians.
GaussianScene make_toy_scene(const ToySceneParams& params = {});

/// Degree-0 coefficient that renders as `color` (higher orders zero).
Vec3 k0_for_color(const Vec3& color);

/// Copy with every non-object Gaussian and the sky recoloured at random from `seed`.
GaussianScene recolor_background(const GaussianScene& scene, std::uint64_t seed);

/// Copy with every object Gaussian set to `color` (degree 0 only).
GaussianScene recolor_object(const GaussianScene& scene, const Vec3& color);

struct ToyDatasetConfig {
    std::size_t samples = 600;
    double decoy_fraction = 0.3;       // object recoloured, labelled kDecoyClass
    double recolor_fraction = 0.4;     // background recoloured
    double min_distance = 5.5, max_distance = 10.0;
    double min_pitch = 15.0, max_pitch = 55.0;
    double jitter_contrast = 0.2;      // contrast in [1 - j, 1 + j]
    double jitter_brightness = 0.1;
    bool holdout_grid = true;          // append the clean "toy" grid as the held-out split
    std::uint64_t seed = 11;
};

/// Random-viewpoint renders of the scene with boxes from the object mask.
DetectionDataset make_toy_dataset(const GaussianScene& scene, const ToyDatasetConfig& cfg = {});

/// Clean renders of a grid with their mask boxes; views where the object is invisible get no box.
DetectionDataset grid_dataset(const GaussianScene& scene, const ViewGrid& grid, bool holdout);

}  // namespace pga
