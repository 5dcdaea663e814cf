#include "pga/camera.hpp"

#include "pga/errors.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

namespace pga {

void CameraView::validate() const {
    const auto& k = intrinsics;
    if (!(k.fx > 0.0) || !(k.fy > 0.0)) throw InvalidParameter("camera focal lengths must be positive");
    if (k.width < 16 || k.height < 16) throw InvalidParameter("camera image must be at least 16x16");
    if (!std::isfinite(k.cx) || !std::isfinite(k.cy)) throw InvalidParameter("camera principal point not finite");
    if (!rotation.allFinite() || !translation.allFinite()) throw InvalidParameter("camera pose not finite");
    if ((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
        throw InvalidParameter("camera rotation is not orthonormal");
    }
}

CameraView make_viewpoint(const Vec3& target, double distance, double pitch_deg, double azimuth_deg,
                          const Intrinsics& intrinsics) {
    if (!(distance > 0.0) || !std::isfinite(distance)) throw InvalidParameter("viewpoint distance must be positive");
    if (!(pitch_deg >= 0.0 && pitch_deg < 90.0)) {
        throw InvalidParameter("viewpoint pitch must be in [0, 90) degrees (90 is a degenerate look-at)");
    }
    if (!std::isfinite(azimuth_deg)) throw InvalidParameter("viewpoint azimuth not finite");

    constexpr double deg = std::numbers::pi / 180.0;
    const double p = pitch_deg * deg;
    const double a = azimuth_deg * deg;
    const Vec3 eye = target + distance * Vec3(std::cos(p) * std::cos(a), std::cos(p) * std::sin(a), std::sin(p));

    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
    const Vec3 down = forward.cross(right);

    CameraView cam;
    cam.intrinsics = intrinsics;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    cam.validate();
    return cam;
}

}  // namespace pga
