#pragma once

// Independent reference implementations used as test oracles. They share no code with the
// library beyond plain data types.

#include "pga/camera.hpp"
#include "pga/detector.hpp"
#include "pga/image.hpp"
#include "pga/scene.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

using pga::Vec3;

inline double factorial(int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

// Real SH with the Condon-Shortley phase, ordered m = -l..l within each degree.
inline double real_sh(int l, int m, const Vec3& d) {
    const double theta = std::acos(std::clamp(d.z(), -1.0, 1.0));
    const double phi = std::atan2(d.y(), d.x());
    const int am = std::abs(m);
    const double k = std::sqrt((2.0 * l + 1.0) / (4.0 * std::numbers::pi) * factorial(l - am) / factorial(l + am));
    // std::assoc_legendre omits (-1)^m
    const double p = ((am % 2) ? -1.0 : 1.0) * std::assoc_legendre(l, am, std::cos(theta));
    if (m == 0) return k * p;
    if (m > 0) return std::sqrt(2.0) * k * std::cos(am * phi) * p;
    return std::sqrt(2.0) * k * std::sin(am * phi) * p;
}

inline Vec3 sh_color(const std::vector<double>& sh, const Vec3& dir, int degree, bool clamp = true) {
    Vec3 c = Vec3::Constant(0.5);
    int basis = 0;
    for (int l = 0; l <= degree; ++l) {
        for (int m = -l; m <= l; ++m, ++basis) {
            const double y = real_sh(l, m, dir);
            for (int ch = 0; ch < 3; ++ch) c[ch] += sh[3 * basis + ch] * y;
        }
    }
    if (clamp) c = c.cwiseMax(0.0).cwiseMin(1.0);
    return c;
}

inline pga::Mat3 covariance(const Vec3& s, const pga::Vec4& q) {
    const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    const pga::Mat3 R = quat.normalized().toRotationMatrix();
    pga::Mat3 S = pga::Mat3::Zero();
    for (int i = 0; i < 3; ++i) S(i, i) = s[i] * s[i];
    return R * S * R.transpose();
}

struct Projected {
    bool visible = false;
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
    double depth = 0.0;
};

// Projection with a central-difference Jacobian of the pinhole map.
inline Projected project(const pga::Gaussian3D& g, const pga::CameraView& cam) {
    Projected p;
    const Vec3 t = cam.rotation * g.mean + cam.translation;
    if (t.z() <= 0.01) return p;
    const auto& k = cam.intrinsics;
    auto pin = [&](const Vec3& v) {
        return Eigen::Vector2d(k.fx * v.x() / v.z() + k.cx, k.fy * v.y() / v.z() + k.cy);
    };
    Eigen::Matrix<double, 2, 3> J;
    const double h = 1e-6 * std::max(1.0, t.norm());
    for (int i = 0; i < 3; ++i) {
        Vec3 a = t, b = t;
        a[i] += h;
        b[i] -= h;
        J.col(i) = (pin(a) - pin(b)) / (2.0 * h);
    }
    p.visible = true;
    p.mean = pin(t);
    p.depth = t.z();
    p.cov = J * cam.rotation * covariance(g.scale, g.rotation) * cam.rotation.transpose() * J.transpose();
    p.cov(0, 0) += 0.3;
    p.cov(1, 1) += 0.3;
    return p;
}

// Per-pixel compositing with a full depth sort of every Gaussian at every pixel.
struct Composite {
    pga::Image rgb, alpha, object_alpha;
};

inline Composite composite(const pga::GaussianScene& scene, const pga::CameraView& cam) {
    const int W = cam.intrinsics.width, H = cam.intrinsics.height;
    Composite out{pga::Image(W, H, 3), pga::Image(W, H, 1), pga::Image(W, H, 1)};
    std::vector<Projected> proj;
    std::vector<Vec3> colors;
    const Vec3 eye = -cam.rotation.transpose() * cam.translation;
    for (const auto& g : scene.gaussians) {
        proj.push_back(project(g, cam));
        colors.push_back(sh_color(g.sh, (g.mean - eye).normalized(), scene.sh_degree));
    }
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            struct Hit {
                double depth;
                std::size_t index;
                double alpha;
            };
            std::vector<Hit> hits;
            const Eigen::Vector2d px(x + 0.5, y + 0.5);
            for (std::size_t i = 0; i < proj.size(); ++i) {
                if (!proj[i].visible) continue;
                const Eigen::Vector2d d = px - proj[i].mean;
                const double q = d.dot(proj[i].cov.inverse() * d);
                if (q > 9.0) continue;
                hits.push_back({proj[i].depth, i, std::min(0.99, scene.gaussians[i].opacity * std::exp(-0.5 * q))});
            }
            std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
                return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
            });
            double T = 1.0;
            Vec3 c = Vec3::Zero();
            double obj = 0.0;
            for (const auto& h : hits) {
                if (T < 1e-4) break;
                c += colors[h.index] * h.alpha * T;
                if (scene.gaussians[h.index].is_object) obj += h.alpha * T;
                T *= 1.0 - h.alpha;
            }
            c += scene.background_color * T;
            for (int ch = 0; ch < 3; ++ch) out.rgb.at(x, y, ch) = c[ch];
            out.alpha.at(x, y) = 1.0 - T;
            out.object_alpha.at(x, y) = obj;
        }
    }
    return out;
}

// Average precision by sweeping every confidence threshold and interpolating precision as
// the best precision at any recall at least as large.
inline double average_precision(const std::vector<std::vector<pga::Detection>>& dets,
                                 const std::vector<std::vector<pga::GroundTruth>>& gts, int cls) {
    struct Item {
        double conf;
        std::size_t image, box;
    };
    std::vector<Item> items;
    std::size_t n_gt = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        for (const auto& g : gts[i]) n_gt += g.class_id == cls;
        for (std::size_t b = 0; b < dets[i].size(); ++b) {
            if (dets[i][b].class_id == cls) items.push_back({dets[i][b].confidence, i, b});
        }
    }
    // rank: confidence desc, image asc, box asc (insertion sort keeps it obviously correct)
    for (std::size_t i = 1; i < items.size(); ++i) {
        for (std::size_t j = i; j > 0; --j) {
            const auto& a = items[j - 1];
            const auto& b = items[j];
            const bool swap = a.conf < b.conf || (a.conf == b.conf && (a.image > b.image || (a.image == b.image && a.box > b.box)));
            if (!swap) break;
            std::swap(items[j - 1], items[j]);
        }
    }
    std::vector<std::vector<int>> used(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), 0);
    std::vector<double> prec, rec;
    double tp = 0;
    for (std::size_t r = 0; r < items.size(); ++r) {
        const auto& d = dets[items[r].image][items[r].box];
        int best = -1;
        double best_iou = 0.5;
        for (std::size_t j = 0; j < gts[items[r].image].size(); ++j) {
            const auto& g = gts[items[r].image][j];
            if (g.class_id != cls || used[items[r].image][j]) continue;
            const double ix = std::max(0.0, std::min(d.bbox.xmax, g.bbox.xmax) - std::max(d.bbox.xmin, g.bbox.xmin));
            const double iy = std::max(0.0, std::min(d.bbox.ymax, g.bbox.ymax) - std::max(d.bbox.ymin, g.bbox.ymin));
            const double inter = ix * iy;
            const double uni = d.bbox.area() + g.bbox.area() - inter;
            const double o = uni > 0 ? inter / uni : 0.0;
            if (o >= best_iou && (best < 0 || o > best_iou)) {
                best = static_cast<int>(j);
                best_iou = o;
            }
        }
        if (best >= 0) {
            used[items[r].image][best] = 1;
            tp += 1;
        }
        prec.push_back(tp / (r + 1.0));
        rec.push_back(tp / n_gt);
    }
    double ap = 0.0;
    for (std::size_t k = 1; k <= n_gt; ++k) {
        const double level = static_cast<double>(k) / n_gt;
        double best = 0.0;
        for (std::size_t r = 0; r < prec.size(); ++r) {
            if (rec[r] >= level - 1e-15) best = std::max(best, prec[r]);
        }
        ap += best / n_gt;
    }
    return ap;
}

// ---- random fixtures --------------------------------------------------------------------

inline pga::Vec4 random_quaternion(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    pga::Vec4 q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized();
}

inline pga::GaussianScene random_scene(std::mt19937_64& rng, std::size_t count, int degree = 3,
                                       double object_fraction = 0.5) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    pga::GaussianScene s;
    s.sh_degree = degree;
    s.background_color = Vec3(u(rng), u(rng), u(rng));
    for (std::size_t i = 0; i < count; ++i) {
        pga::Gaussian3D g;
        g.mean = Vec3(4.0 * u(rng) - 2.0, 4.0 * u(rng) - 2.0, 4.0 * u(rng) - 2.0);
        g.scale = Vec3(0.05 + 0.5 * u(rng), 0.05 + 0.5 * u(rng), 0.05 + 0.5 * u(rng));
        g.rotation = random_quaternion(rng);
        g.opacity = u(rng);
        g.sh.resize(3 * pga::sh_basis_count(degree));
        for (std::size_t k = 0; k < g.sh.size(); ++k) g.sh[k] = (k < 3 ? 1.2 : 0.3) * (2.0 * u(rng) - 1.0);
        g.is_object = u(rng) < object_fraction;
        s.gaussians.push_back(g);
    }
    return s;
}

inline pga::CameraView random_camera(std::mt19937_64& rng, int size = 32) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    pga::Intrinsics k{size * (0.8 + 0.6 * u(rng)), size * (0.8 + 0.6 * u(rng)), size * (0.4 + 0.2 * u(rng)),
                      size * (0.4 + 0.2 * u(rng)), size, size};
    return pga::make_viewpoint(Vec3(0.3 * u(rng), 0.3 * u(rng), 0.0), 5.0 + 3.0 * u(rng), 5.0 + 70.0 * u(rng),
                               360.0 * u(rng), k);
}

}  // namespace oracle
