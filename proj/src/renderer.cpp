#include "pga/renderer.hpp"

#include "pga/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pga {

std::vector<Contribution> ContributionTrace::at_pixel(std::uint32_t pixel) const {
    std::vector<Contribution> out;
    for (const auto& c : entries) {
        if (c.pixel == pixel) out.push_back(c);
    }
    return out;
}

std::optional<Splat2D> project_gaussian(const Gaussian3D& g, const CameraView& cam, int sh_degree,
                                        std::size_t source_index) {
    const Vec3 t = cam.to_camera(g.mean);
    if (t.z() <= kNearPlane) return std::nullopt;

    const auto& k = cam.intrinsics;
    const double inv_z = 1.0 / t.z();
    Splat2D s;
    s.mean2d = {k.fx * t.x() * inv_z + k.cx, k.fy * t.y() * inv_z + k.cy};
    s.depth = t.z();

    Eigen::Matrix<double, 2, 3> J;
    J << k.fx * inv_z, 0.0, -k.fx * t.x() * inv_z * inv_z,
         0.0, k.fy * inv_z, -k.fy * t.y() * inv_z * inv_z;
    const Eigen::Matrix<double, 2, 3> T = J * cam.rotation;
    Mat2 cov = T * covariance_from_scale_rotation(g.scale, g.rotation) * T.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += kBlurFloor;
    cov(1, 1) += kBlurFloor;
    s.cov2d = cov;

    const Vec3 dir = (g.mean - cam.position()).normalized();
    s.raw_color = eval_sh_raw(g.sh, dir, sh_degree);
    s.color = s.raw_color.cwiseMax(0.0).cwiseMin(1.0);
    s.base_opacity = g.opacity;
    s.source_index = source_index;
    return s;
}

RenderOutput render(const GaussianScene& scene, const CameraView& cam, const RenderOptions& opts) {
    cam.validate();
    const int W = cam.width(), H = cam.height();
    const std::size_t npix = static_cast<std::size_t>(W) * H;

    RenderOutput out;
    out.rgb = Image(W, H, 3);
    out.alpha = Image(W, H, 1);
    out.object_alpha = Image(W, H, 1);

    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        if (auto s = project_gaussian(scene.gaussians[i], cam, scene.sh_degree, i)) out.splats.push_back(*s);
    }
    std::sort(out.splats.begin(), out.splats.end(), [](const Splat2D& a, const Splat2D& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.source_index < b.source_index;
    });

    std::vector<double> T(npix, 1.0);
    std::vector<std::uint8_t> done(npix, 0);
    ContributionTrace trace;

    for (const auto& s : out.splats) {
        const double a = s.cov2d(0, 0), b = s.cov2d(0, 1), c = s.cov2d(1, 1);
        const double det = a * c - b * b;
        if (!(det > 0.0)) continue;
        const double ia = c / det, ib = -b / det, ic = a / det;
        // Bounding box of the 3-sigma ellipse; pixel centres lie at integer + 0.5.
        const double rx = 3.0 * std::sqrt(a), ry = 3.0 * std::sqrt(c);
        const int x0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.x() - rx - 0.5)));
        const int x1 = std::min(W - 1, static_cast<int>(std::floor(s.mean2d.x() + rx - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(s.mean2d.y() - ry - 0.5)));
        const int y1 = std::min(H - 1, static_cast<int>(std::floor(s.mean2d.y() + ry - 0.5)));
        if (x0 > x1 || y0 > y1) continue;
        const bool is_object = scene.gaussians[s.source_index].is_object;

        for (int y = y0; y <= y1; ++y) {
            const double dy = y + 0.5 - s.mean2d.y();
            for (int x = x0; x <= x1; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * W + x;
                if (done[p]) continue;
                const double dx = x + 0.5 - s.mean2d.x();
                const double q = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy;
                if (q > kCutoffMahalanobis2) continue;
                const double unclamped = s.base_opacity * std::exp(-0.5 * q);
                const bool clamped = unclamped > kMaxAlpha;
                const double alpha = clamped ? kMaxAlpha : unclamped;
                const double w = alpha * T[p];
                for (int ch = 0; ch < 3; ++ch) out.rgb.data[3 * p + ch] += w * s.color[ch];
                if (is_object) out.object_alpha.data[p] += w;
                if (opts.record_trace) {
                    trace.entries.push_back({static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(s.source_index),
                                             alpha, T[p], clamped});
                }
                T[p] *= 1.0 - alpha;
                if (T[p] < kMinTransmittance) done[p] = 1;
            }
        }
    }

    for (std::size_t p = 0; p < npix; ++p) {
        for (int ch = 0; ch < 3; ++ch) out.rgb.data[3 * p + ch] += T[p] * scene.background_color[ch];
        out.alpha.data[p] = 1.0 - T[p];
    }
    if (opts.record_trace) {
        trace.final_transmittance = std::move(T);
        out.trace = std::move(trace);
    }
    return out;
}

Mask mask_from_object_alpha(const Image& object_alpha, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidParameter("mask threshold must be in (0, 1)");
    Mask m(object_alpha.width, object_alpha.height);
    for (std::size_t p = 0; p < m.data.size(); ++p) m.data[p] = object_alpha.data[p] >= threshold ? 1 : 0;
    return m;
}

Mask render_object_mask(const GaussianScene& scene, const CameraView& cam, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidParameter("mask threshold must be in (0, 1)");
    return mask_from_object_alpha(render(scene, cam).object_alpha, threshold);
}

Image composite_detect_image(const Image& rendered, const Image& original, const Mask& mask) {
    if (!rendered.same_shape(original) || rendered.width != mask.width || rendered.height != mask.height) {
        throw InvalidParameter("composite_detect_image: dimension mismatch");
    }
    Image out = original;
    const int C = rendered.channels;
    for (std::size_t p = 0; p < mask.data.size(); ++p) {
        if (!mask.data[p]) continue;
        for (int c = 0; c < C; ++c) out.data[p * C + c] = rendered.data[p * C + c];
    }
    return out;
}

std::vector<Vec3> backward_color(const RenderOutput& output, const Image& dL_dpixels, std::size_t gaussian_count) {
    if (!output.trace) throw StateError("backward pass needs a render with record_trace enabled");
    if (!dL_dpixels.same_shape(output.rgb)) throw InvalidParameter("pixel gradient shape does not match render");
    std::vector<Vec3> grad(gaussian_count, Vec3::Zero());
    for (const auto& c : output.trace->entries) {
        const double w = c.weight();
        const double* g = &dL_dpixels.data[3 * static_cast<std::size_t>(c.pixel)];
        Vec3& acc = grad[c.source];
        acc[0] += w * g[0];
        acc[1] += w * g[1];
        acc[2] += w * g[2];
    }
    return grad;
}

std::vector<Vec3> backward_color_gradient(const RenderOutput& output, const CameraView& cam,
                                          const GaussianScene& scene, const Image& dL_dpixels) {
    const auto dcolor = backward_color(output, dL_dpixels, scene.size());
    const Vec3 eye = cam.position();
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        const auto& g = scene.gaussians[i];
        if (!g.is_object) continue;
        const Vec3 raw = eval_sh_raw(g.sh, (g.mean - eye).normalized(), scene.sh_degree);
        Vec3 d;
        for (int ch = 0; ch < 3; ++ch) {
            const bool active = raw[ch] >= 0.0 && raw[ch] <= 1.0;
            d[ch] = active ? dcolor[i][ch] * kShC0 : 0.0;
        }
        out.push_back(d);
    }
    return out;
}

}  // namespace pga
