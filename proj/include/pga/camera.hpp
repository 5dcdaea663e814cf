#pragma once

#include "pga/scene.hpp"

namespace pga {

/// Pinhole intrinsics in pixel units. Pixel (x, y) has its centre at (x + 0.5, y + 0.5).
struct Intrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
};

/// Camera with OpenCV axes (x right, y down, z forward): p_cam = rotation * p_world + translation.
struct CameraView {
    Intrinsics intrinsics;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    int width() const { return intrinsics.width; }
    int height() const { return intrinsics.height; }

    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
    Vec3 position() const { return -rotation.transpose() * translation; }

    /// Throws InvalidParameter if fx, fy <= 0, the image is smaller than 16x16, or the pose is not rigid.
    void validate() const;
};

/// Camera on the sphere of radius `distance` around `target`, looking at it with +z as up.
/// Pitch is the elevation above the horizontal plane, azimuth is measured counter-clockwise
/// from +x. Throws InvalidParameter for distance <= 0 or pitch outside [0, 90).
CameraView make_viewpoint(const Vec3& target, double distance, double pitch_deg, double azimuth_deg,
                          const Intrinsics& intrinsics);

}  // namespace pga
