#include "pga/attack.hpp"
#include "pga/errors.hpp"

#include <algorithm>
#include <cmath>

namespace pga {

void EotRanges::validate() const {
    auto range = [](double lo, double hi, const char* what) {
        if (!(std::isfinite(lo) && std::isfinite(hi) && lo <= hi)) {
            throw InvalidParameter(std::string("eot.") + what + ": min must not exceed max");
        }
    };
    range(scale_min, scale_max, "scale");
    range(contrast_min, contrast_max, "contrast");
    range(brightness_min, brightness_max, "brightness");
    if (!(scale_min > 0.0)) throw InvalidParameter("eot.scale_min must be positive");
    if (!(noise >= 0.0)) throw InvalidParameter("eot.noise must be non-negative");
}

TransformSample eot_sample(std::mt19937_64& rng, const EotRanges& r, int width, int height) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    TransformSample t;
    t.scale = r.scale_min + (r.scale_max - r.scale_min) * unit(rng);
    t.contrast = r.contrast_min + (r.contrast_max - r.contrast_min) * unit(rng);
    t.brightness = r.brightness_min + (r.brightness_max - r.brightness_min) * unit(rng);
    if (r.noise > 0.0) {
        t.noise = Image(width, height, 3);
        for (double& v : t.noise.data) v = r.noise * (2.0 * unit(rng) - 1.0);
    }
    return t;
}

namespace {

struct Tap {
    int i0, i1;
    double w0, w1;
};

// Bilinear taps along one axis for an output coordinate under scale s about the centre.
std::vector<Tap> taps(int n, double s) {
    std::vector<Tap> out(n);
    const double c = 0.5 * n;
    for (int i = 0; i < n; ++i) {
        if (s == 1.0) {
            out[i] = {i, i, 1.0, 0.0};
            continue;
        }
        const double u = c + (i + 0.5 - c) / s - 0.5;
        const double f = std::floor(u);
        const double a = u - f;
        const int i0 = std::clamp(static_cast<int>(f), 0, n - 1);
        const int i1 = std::clamp(static_cast<int>(f) + 1, 0, n - 1);
        out[i] = {i0, i1, 1.0 - a, a};
    }
    return out;
}

Image rescale(const Image& im, double s) {
    if (s == 1.0) return im;
    const auto tx = taps(im.width, s), ty = taps(im.height, s);
    Image out(im.width, im.height, im.channels);
    for (int y = 0; y < im.height; ++y) {
        const Tap& a = ty[y];
        for (int x = 0; x < im.width; ++x) {
            const Tap& b = tx[x];
            for (int c = 0; c < im.channels; ++c) {
                out.at(x, y, c) = a.w0 * (b.w0 * im.at(b.i0, a.i0, c) + b.w1 * im.at(b.i1, a.i0, c)) +
                                  a.w1 * (b.w0 * im.at(b.i0, a.i1, c) + b.w1 * im.at(b.i1, a.i1, c));
            }
        }
    }
    return out;
}

Image rescale_backward(const Image& grad, double s) {
    if (s == 1.0) return grad;
    const auto tx = taps(grad.width, s), ty = taps(grad.height, s);
    Image out(grad.width, grad.height, grad.channels);
    for (int y = 0; y < grad.height; ++y) {
        const Tap& a = ty[y];
        for (int x = 0; x < grad.width; ++x) {
            const Tap& b = tx[x];
            for (int c = 0; c < grad.channels; ++c) {
                const double g = grad.at(x, y, c);
                out.at(b.i0, a.i0, c) += a.w0 * b.w0 * g;
                out.at(b.i1, a.i0, c) += a.w0 * b.w1 * g;
                out.at(b.i0, a.i1, c) += a.w1 * b.w0 * g;
                out.at(b.i1, a.i1, c) += a.w1 * b.w1 * g;
            }
        }
    }
    return out;
}

void check_noise(const Image& image, const TransformSample& t) {
    if (!t.noise.data.empty() && !t.noise.same_shape(image)) {
        throw InvalidParameter("eot: noise field does not match the image shape");
    }
}

}  // namespace

Image eot_apply(const Image& image, const TransformSample& t) {
    check_noise(image, t);
    Image out = rescale(image, t.scale);
    const bool noisy = !t.noise.data.empty();
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double v = t.contrast * out.data[i] + t.brightness + (noisy ? t.noise.data[i] : 0.0);
        out.data[i] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

Image eot_backward(const Image& image, const TransformSample& t, const Image& grad_output) {
    check_noise(image, t);
    if (!grad_output.same_shape(image)) throw InvalidParameter("eot_backward: gradient shape mismatch");
    const Image scaled = rescale(image, t.scale);
    const bool noisy = !t.noise.data.empty();
    Image g(image.width, image.height, image.channels);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        const double v = t.contrast * scaled.data[i] + t.brightness + (noisy ? t.noise.data[i] : 0.0);
        g.data[i] = (v >= 0.0 && v <= 1.0) ? t.contrast * grad_output.data[i] : 0.0;
    }
    return rescale_backward(g, t.scale);
}

BBox eot_box(const BBox& box, const TransformSample& t, int width, int height) {
    const double cx = 0.5 * width, cy = 0.5 * height;
    BBox out{cx + (box.xmin - cx) * t.scale, cy + (box.ymin - cy) * t.scale, cx + (box.xmax - cx) * t.scale,
             cy + (box.ymax - cy) * t.scale};
    out.xmin = std::clamp(out.xmin, 0.0, static_cast<double>(width));
    out.xmax = std::clamp(out.xmax, 0.0, static_cast<double>(width));
    out.ymin = std::clamp(out.ymin, 0.0, static_cast<double>(height));
    out.ymax = std::clamp(out.ymax, 0.0, static_cast<double>(height));
    return out;
}

}  // namespace pga
