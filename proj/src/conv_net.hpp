#pragma once

// Internal forward/backward machinery for DetectorModel.

#include "pga/detector.hpp"

#include <vector>

namespace pga::detail {

struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
    double& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
    double at(int ci, int y, int x) const { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
};

struct ForwardTrace {
    std::vector<Tensor> inputs;  // input of each layer
    std::vector<Tensor> pre;     // pre-activation output of each layer
    Tensor output;               // post-activation output of the last layer
};

using ParamGrads = std::vector<std::vector<double>>;

Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const Tensor& t);

void check_input(const Architecture& arch, const Image& image);

void forward(const DetectorModel& model, const Tensor& input, ForwardTrace& trace);

/// Backpropagates `grad_output` (gradient w.r.t. the final post-activation output).
/// Weight/bias gradients are accumulated into dw/db when non-null. Returns the input gradient
/// when `want_input_grad` is set, otherwise an empty tensor.
Tensor backward(const DetectorModel& model, const ForwardTrace& trace, const Tensor& grad_output, ParamGrads* dw,
                ParamGrads* db, bool want_input_grad);

RawOutput decode(const Architecture& arch, const Tensor& head);

/// Box for one anchor given its deltas; dw/dh are clamped to [-4, 4] before exponentiation.
BBox decode_box(const AnchorShape& anchor, double cx, double cy, const double* deltas);
BBox anchor_box(const AnchorShape& anchor, double cx, double cy);

/// Scatters a RawGradient into a gradient over the head tensor.
Tensor head_gradient(const Architecture& arch, const RawOutput& raw, const RawGradient& grad);

double sigmoid(double x);

}  // namespace pga::detail
