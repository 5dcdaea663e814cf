#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

namespace pga {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Real spherical-harmonic band-0 constant, 1 / (2 sqrt(pi)).
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr int kMaxShDegree = 3;

/// Number of basis functions up to and including `degree`.
constexpr int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }

/// One splat. Rotation is a (w, x, y, z) quaternion. `sh` stores coefficients
/// basis-major with the colour channel fastest: sh[3 * basis + channel].
struct Gaussian3D {
    Vec3 mean = Vec3::Zero();
    Vec3 scale = Vec3::Ones();
    Vec4 rotation{1.0, 0.0, 0.0, 0.0};
    double opacity = 1.0;
    std::vector<double> sh;
    bool is_object = false;

    Vec3 zero_order() const { return {sh[0], sh[1], sh[2]}; }
};

struct GaussianScene {
    std::vector<Gaussian3D> gaussians;
    int sh_degree = 3;
    Vec3 background_color = Vec3::Zero();

    std::size_t size() const { return gaussians.size(); }
    std::size_t object_count() const;

    /// Throws InvalidParameter on the first Gaussian that violates a field invariant.
    void validate() const;
};

bool operator==(const Gaussian3D& a, const Gaussian3D& b);
bool operator==(const GaussianScene& a, const GaussianScene& b);

/// Returns q / |q|. Throws InvalidParameter for a zero or non-finite quaternion.
Vec4 normalized_quaternion(const Vec4& q);

Mat3 rotation_from_quaternion(const Vec4& q);

/// Sigma = R diag(s)^2 R^T with R from the normalized quaternion. Throws InvalidParameter for
/// non-finite input or a zero quaternion.
Mat3 covariance_from_scale_rotation(const Vec3& scale, const Vec4& rotation);

/// Fills `out` (size >= sh_basis_count(degree)) with the real SH basis evaluated at `dir`.
void eval_sh_basis(const Vec3& dir, int degree, std::span<double> out);

/// Pre-activation colour: 0.5 + sum_lm k_lm Y_lm(dir), per channel.
Vec3 eval_sh_raw(std::span<const double> sh, const Vec3& dir, int degree);

/// clamp(0.5 + sum_lm k_lm Y_lm(dir), 0, 1). Throws InvalidParameter if `sh` holds
/// fewer than 3 * (degree + 1)^2 coefficients or the degree is outside [0, 3].
Vec3 eval_sh_color(std::span<const double> sh, const Vec3& dir, int degree);

/// Mutable window onto the degree-0 SH coefficients of the object Gaussians of a scene.
/// Nothing else in the scene can be reached through it.
class ZeroOrderView {
public:
    /// Throws PreconditionError when the scene has no object Gaussians.
    explicit ZeroOrderView(GaussianScene& scene);

    std::size_t size() const { return indices_.size(); }
    std::size_t coefficient_count() const { return 3 * indices_.size(); }

    Vec3 get(std::size_t i) const;
    void set(std::size_t i, const Vec3& value);

    /// Flat [g0.r, g0.g, g0.b, g1.r, ...] copy of all coefficients.
    std::vector<double> snapshot() const;
    void assign(std::span<const double> flat);

    /// Index in the scene of the i-th object Gaussian.
    std::size_t scene_index(std::size_t i) const { return indices_[i]; }

private:
    GaussianScene* scene_;
    std::vector<std::size_t> indices_;
};

inline ZeroOrderView zero_order_view(GaussianScene& scene) { return ZeroOrderView(scene); }

/// Indices of the object Gaussians, in scene order. The order matches ZeroOrderView.
std::vector<std::size_t> object_indices(const GaussianScene& scene);

/// Zero-order snapshot without requiring mutable access.
std::vector<double> zero_order_snapshot(const GaussianScene& scene);

}  // namespace pga
