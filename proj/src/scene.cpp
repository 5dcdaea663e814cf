#include "pga/scene.hpp"

#include "pga/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pga {
namespace {

constexpr double kShC1 = 0.4886025119029199;
constexpr double kShC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                            -1.0925484305920792, 0.5462742152960396};
constexpr double kShC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                            0.3731763325901154, -0.4570457994644658, 1.445305721320277,
                            -0.5900435899266435};

bool all_finite(const auto& v) { return v.array().isFinite().all(); }

}  // namespace

std::size_t GaussianScene::object_count() const {
    return static_cast<std::size_t>(
        std::count_if(gaussians.begin(), gaussians.end(), [](const Gaussian3D& g) { return g.is_object; }));
}

void GaussianScene::validate() const {
    if (sh_degree < 0 || sh_degree > kMaxShDegree) {
        throw InvalidParameter("sh_degree must be in [0, 3], got " + std::to_string(sh_degree));
    }
    const std::size_t expected = 3 * sh_basis_count(sh_degree);
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const auto& g = gaussians[i];
        const std::string where = "gaussian " + std::to_string(i) + ": ";
        if (!all_finite(g.mean) || !all_finite(g.scale) || !all_finite(g.rotation) || !std::isfinite(g.opacity)) {
            throw InvalidParameter(where + "non-finite field");
        }
        if ((g.scale.array() <= 0.0).any()) throw InvalidParameter(where + "scale must be positive");
        if (std::abs(g.rotation.norm() - 1.0) > 1e-6) throw InvalidParameter(where + "rotation not normalized");
        if (g.opacity < 0.0 || g.opacity > 1.0) throw InvalidParameter(where + "opacity outside [0, 1]");
        if (g.sh.size() != expected) {
            throw InvalidParameter(where + "expected " + std::to_string(expected) + " SH coefficients, got " +
                                   std::to_string(g.sh.size()));
        }
    }
}

bool operator==(const Gaussian3D& a, const Gaussian3D& b) {
    return a.mean == b.mean && a.scale == b.scale && a.rotation == b.rotation && a.opacity == b.opacity &&
           a.sh == b.sh && a.is_object == b.is_object;
}

bool operator==(const GaussianScene& a, const GaussianScene& b) {
    return a.sh_degree == b.sh_degree && a.background_color == b.background_color && a.gaussians == b.gaussians;
}

Vec4 normalized_quaternion(const Vec4& q) {
    const double n = q.norm();
    if (!std::isfinite(n) || n == 0.0) throw InvalidParameter("quaternion must be finite and non-zero");
    return q / n;
}

Mat3 rotation_from_quaternion(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 covariance_from_scale_rotation(const Vec3& scale, const Vec4& rotation) {
    if (!all_finite(scale) || !all_finite(rotation)) {
        throw InvalidParameter("covariance_from_scale_rotation: non-finite input");
    }
    const Mat3 m = rotation_from_quaternion(normalized_quaternion(rotation)) * scale.asDiagonal();
    Mat3 sigma = m * m.transpose();
    // exact symmetry regardless of rounding in the product
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    return sigma;
}

void eval_sh_basis(const Vec3& dir, int degree, std::span<double> out) {
    if (degree < 0 || degree > kMaxShDegree) throw InvalidParameter("SH degree must be in [0, 3]");
    if (out.size() < static_cast<std::size_t>(sh_basis_count(degree))) {
        throw InvalidParameter("SH basis output buffer too small");
    }
    out[0] = kShC0;
    if (degree < 1) return;
    const double x = dir.x(), y = dir.y(), z = dir.z();
    out[1] = -kShC1 * y;
    out[2] = kShC1 * z;
    out[3] = -kShC1 * x;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, yz = y * z, xz = x * z;
    out[4] = kShC2[0] * xy;
    out[5] = kShC2[1] * yz;
    out[6] = kShC2[2] * (2.0 * zz - xx - yy);
    out[7] = kShC2[3] * xz;
    out[8] = kShC2[4] * (xx - yy);
    if (degree < 3) return;
    out[9] = kShC3[0] * y * (3.0 * xx - yy);
    out[10] = kShC3[1] * xy * z;
    out[11] = kShC3[2] * y * (4.0 * zz - xx - yy);
    out[12] = kShC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kShC3[4] * x * (4.0 * zz - xx - yy);
    out[14] = kShC3[5] * z * (xx - yy);
    out[15] = kShC3[6] * x * (xx - 3.0 * yy);
}

Vec3 eval_sh_raw(std::span<const double> sh, const Vec3& dir, int degree) {
    if (degree < 0 || degree > kMaxShDegree) throw InvalidParameter("SH degree must be in [0, 3]");
    const int n = sh_basis_count(degree);
    if (sh.size() < static_cast<std::size_t>(3 * n)) {
        throw InvalidParameter("SH coefficient array too short for degree " + std::to_string(degree));
    }
    double basis[16];
    eval_sh_basis(dir, degree, basis);
    Vec3 c = Vec3::Constant(0.5);
    for (int k = 0; k < n; ++k) {
        c[0] += basis[k] * sh[3 * k + 0];
        c[1] += basis[k] * sh[3 * k + 1];
        c[2] += basis[k] * sh[3 * k + 2];
    }
    return c;
}

Vec3 eval_sh_color(std::span<const double> sh, const Vec3& dir, int degree) {
    return eval_sh_raw(sh, dir, degree).cwiseMax(0.0).cwiseMin(1.0);
}

ZeroOrderView::ZeroOrderView(GaussianScene& scene) : scene_(&scene), indices_(object_indices(scene)) {
    if (indices_.empty()) throw PreconditionError("zero_order_view: scene has no object Gaussians");
}

Vec3 ZeroOrderView::get(std::size_t i) const { return scene_->gaussians[indices_.at(i)].zero_order(); }

void ZeroOrderView::set(std::size_t i, const Vec3& value) {
    auto& sh = scene_->gaussians[indices_.at(i)].sh;
    sh[0] = value[0];
    sh[1] = value[1];
    sh[2] = value[2];
}

std::vector<double> ZeroOrderView::snapshot() const { return zero_order_snapshot(*scene_); }

void ZeroOrderView::assign(std::span<const double> flat) {
    if (flat.size() != coefficient_count()) {
        throw InvalidParameter("zero-order assign: expected " + std::to_string(coefficient_count()) +
                               " values, got " + std::to_string(flat.size()));
    }
    for (std::size_t i = 0; i < indices_.size(); ++i) set(i, {flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]});
}

std::vector<std::size_t> object_indices(const GaussianScene& scene) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        if (scene.gaussians[i].is_object) out.push_back(i);
    }
    return out;
}

std::vector<double> zero_order_snapshot(const GaussianScene& scene) {
    std::vector<double> out;
    for (const auto& g : scene.gaussians) {
        if (!g.is_object) continue;
        out.insert(out.end(), g.sh.begin(), g.sh.begin() + 3);
    }
    return out;
}

}  // namespace pga
