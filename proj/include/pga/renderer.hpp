#pragma once

#include "pga/camera.hpp"
#include "pga/image.hpp"
#include "pga/scene.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace pga {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kBlurFloor = 0.3;          // px^2 added to the 2D covariance diagonal
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr double kCutoffMahalanobis2 = 9.0;  // 3-sigma ellipse

struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    Vec3 raw_color = Vec3::Zero();  // before the [0, 1] clamp
    double base_opacity = 0.0;
    std::size_t source_index = 0;
};

/// Projects one Gaussian. Returns nullopt when its camera-space depth is at or behind the
/// near plane; callers skip such splats.
std::optional<Splat2D> project_gaussian(const Gaussian3D& g, const CameraView& cam, int sh_degree,
                                        std::size_t source_index = 0);

/// One blended term of one pixel: rgb(p) += color(source) * alpha * transmittance.
struct Contribution {
    std::uint32_t pixel;
    std::uint32_t source;
    double alpha;          // effective opacity after falloff and the 0.99 clamp
    double transmittance;  // product of (1 - alpha) of every splat in front
    bool alpha_clamped;

    double weight() const { return alpha * transmittance; }
};

/// Contributions in blending order: for any fixed pixel the entries appear front to back.
struct ContributionTrace {
    std::vector<Contribution> entries;
    std::vector<double> final_transmittance;  // per pixel

    std::vector<Contribution> at_pixel(std::uint32_t pixel) const;
};

struct RenderOptions {
    bool record_trace = false;
};

struct RenderOutput {
    Image rgb;           // H x W x 3
    Image alpha;         // H x W x 1, accumulated opacity
    Image object_alpha;  // H x W x 1, opacity contributed by object Gaussians
    std::optional<ContributionTrace> trace;
    std::vector<Splat2D> splats;  // visible splats in blending order
};

RenderOutput render(const GaussianScene& scene, const CameraView& cam, const RenderOptions& opts = {});

Mask mask_from_object_alpha(const Image& object_alpha, double threshold);

/// M(p) = 1 iff object_alpha(p) >= threshold. Throws InvalidParameter unless threshold is in (0, 1).
Mask render_object_mask(const GaussianScene& scene, const CameraView& cam, double threshold = 0.5);

/// I_det = I_r * M + I_ori * (1 - M).
Image composite_detect_image(const Image& rendered, const Image& original, const Mask& mask);

/// Per-Gaussian dL/d(colour) for every Gaussian of the scene (zeros for splats that never
/// contributed). Colour here is the clamped colour fed to blending.
std::vector<Vec3> backward_color(const RenderOutput& output, const Image& dL_dpixels, std::size_t gaussian_count);

/// dL/d<k>_0 for each object Gaussian, in ZeroOrderView order. The clamp is treated as
/// identity on [0, 1] (boundary included) and as constant outside.
/// Throws StateError if `output` was rendered without a trace.
std::vector<Vec3> backward_color_gradient(const RenderOutput& output, const CameraView& cam,
                                          const GaussianScene& scene, const Image& dL_dpixels);

}  // namespace pga
