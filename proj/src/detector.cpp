#include "pga/detector.hpp"

#include "conv_net.hpp"
#include "pga/errors.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

namespace pga {
namespace detail {
namespace {

constexpr double kLeakySlope = 0.1;
constexpr double kMaxLogScale = 4.0;

int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

int out_size(int in, const ConvSpec& s) { return (in + 2 * s.padding - s.kernel) / s.stride + 1; }

double activate(Activation a, double x) {
    switch (a) {
        case Activation::Identity: return x;
        case Activation::Relu: return x > 0.0 ? x : 0.0;
        case Activation::LeakyRelu: return x > 0.0 ? x : kLeakySlope * x;
    }
    return x;
}

double activate_grad(Activation a, double x) {
    switch (a) {
        case Activation::Identity: return 1.0;
        case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::LeakyRelu: return x > 0.0 ? 1.0 : kLeakySlope;
    }
    return 1.0;
}

// Valid output range [lo, hi] along one axis for kernel offset k.
void valid_range(int k, const ConvSpec& s, int in, int out, int& lo, int& hi) {
    lo = std::max(0, ceil_div(s.padding - k, s.stride));
    hi = std::min(out - 1, floor_div(in - 1 - k + s.padding, s.stride));
}

}  // namespace

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor image_to_tensor(const Image& image) {
    Tensor t(image.channels, image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) t.at(c, y, x) = image.at(x, y, c);
        }
    }
    return t;
}

Image tensor_to_image(const Tensor& t) {
    Image img(t.w, t.h, t.c);
    for (int c = 0; c < t.c; ++c) {
        for (int y = 0; y < t.h; ++y) {
            for (int x = 0; x < t.w; ++x) img.at(x, y, c) = t.at(c, y, x);
        }
    }
    return img;
}

void check_input(const Architecture& arch, const Image& image) {
    const int stride = arch.stride();
    if (image.channels != arch.layers.front().in_channels) {
        throw InvalidParameter("detector input has " + std::to_string(image.channels) + " channels, model expects " +
                               std::to_string(arch.layers.front().in_channels));
    }
    if (image.width <= 0 || image.height <= 0 || image.width % stride != 0 || image.height % stride != 0) {
        throw InvalidParameter("detector input " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                               " is not divisible by the model stride " + std::to_string(stride));
    }
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Column matrix [(ic, ky, kx)][(oy, ox)] of a padded convolution input.
RowMat im2col(const Tensor& x, const ConvSpec& s, int oh, int ow) {
    const int K = s.kernel;
    RowMat col = RowMat::Zero(static_cast<Eigen::Index>(s.in_channels) * K * K, static_cast<Eigen::Index>(oh) * ow);
    for (int ic = 0; ic < s.in_channels; ++ic) {
        const double* xin = &x.v[static_cast<std::size_t>(ic) * x.h * x.w];
        for (int ky = 0; ky < K; ++ky) {
            int y_lo, y_hi;
            valid_range(ky, s, x.h, oh, y_lo, y_hi);
            for (int kx = 0; kx < K; ++kx) {
                int x_lo, x_hi;
                valid_range(kx, s, x.w, ow, x_lo, x_hi);
                double* row = col.row((static_cast<Eigen::Index>(ic) * K + ky) * K + kx).data();
                const int off = kx - s.padding;
                for (int oy = y_lo; oy <= y_hi; ++oy) {
                    const double* src = xin + static_cast<std::size_t>(oy * s.stride + ky - s.padding) * x.w;
                    double* dst = row + static_cast<std::size_t>(oy) * ow;
                    for (int ox = x_lo; ox <= x_hi; ++ox) dst[ox] = src[ox * s.stride + off];
                }
            }
        }
    }
    return col;
}

void col2im(const RowMat& col, const ConvSpec& s, int oh, int ow, Tensor& dx) {
    const int K = s.kernel;
    for (int ic = 0; ic < s.in_channels; ++ic) {
        double* dxin = &dx.v[static_cast<std::size_t>(ic) * dx.h * dx.w];
        for (int ky = 0; ky < K; ++ky) {
            int y_lo, y_hi;
            valid_range(ky, s, dx.h, oh, y_lo, y_hi);
            for (int kx = 0; kx < K; ++kx) {
                int x_lo, x_hi;
                valid_range(kx, s, dx.w, ow, x_lo, x_hi);
                const double* row = col.row((static_cast<Eigen::Index>(ic) * K + ky) * K + kx).data();
                const int off = kx - s.padding;
                for (int oy = y_lo; oy <= y_hi; ++oy) {
                    double* dst = dxin + static_cast<std::size_t>(oy * s.stride + ky - s.padding) * dx.w;
                    const double* src = row + static_cast<std::size_t>(oy) * ow;
                    for (int ox = x_lo; ox <= x_hi; ++ox) dst[ox * s.stride + off] += src[ox];
                }
            }
        }
    }
}

Eigen::Map<const RowMat> weight_matrix(const std::vector<double>& w, const ConvSpec& s) {
    return {w.data(), s.out_channels, static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel};
}

}  // namespace

void forward(const DetectorModel& model, const Tensor& input, ForwardTrace& trace) {
    const auto& layers = model.architecture().layers;
    trace.inputs.resize(layers.size());
    trace.pre.resize(layers.size());
    Tensor current = input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const ConvSpec& s = layers[l];
        const int oh = out_size(current.h, s), ow = out_size(current.w, s);
        Tensor z(s.out_channels, oh, ow);
        Eigen::Map<RowMat> zm(z.v.data(), s.out_channels, static_cast<Eigen::Index>(oh) * ow);
        const auto W = weight_matrix(model.weights(l), s);
        if (s.kernel == 1 && s.stride == 1) {
            Eigen::Map<const RowMat> xm(current.v.data(), s.in_channels, static_cast<Eigen::Index>(oh) * ow);
            zm.noalias() = W * xm;
        } else {
            zm.noalias() = W * im2col(current, s, oh, ow);
        }
        const auto& B = model.biases(l);
        for (int oc = 0; oc < s.out_channels; ++oc) zm.row(oc).array() += B[oc];
        trace.inputs[l] = std::move(current);
        current = z;
        for (double& v : current.v) v = activate(s.activation, v);
        trace.pre[l] = std::move(z);
    }
    trace.output = std::move(current);
}

Tensor backward(const DetectorModel& model, const ForwardTrace& trace, const Tensor& grad_output, ParamGrads* dw,
                ParamGrads* db, bool want_input_grad) {
    const auto& layers = model.architecture().layers;
    Tensor g = grad_output;
    for (std::size_t li = layers.size(); li-- > 0;) {
        const ConvSpec& s = layers[li];
        const Tensor& z = trace.pre[li];
        const Tensor& x = trace.inputs[li];
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] *= activate_grad(s.activation, z.v[i]);

        const int oh = z.h, ow = z.w;
        Eigen::Map<const RowMat> gm(g.v.data(), s.out_channels, static_cast<Eigen::Index>(oh) * ow);
        const bool direct = s.kernel == 1 && s.stride == 1;
        RowMat col;
        if (!direct && dw) col = im2col(x, s, oh, ow);
        if (db) {
            for (int oc = 0; oc < s.out_channels; ++oc) (*db)[li][oc] += gm.row(oc).sum();
        }
        if (dw) {
            Eigen::Map<RowMat> dwm((*dw)[li].data(), s.out_channels,
                                   static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel);
            if (direct) {
                Eigen::Map<const RowMat> xm(x.v.data(), s.in_channels, static_cast<Eigen::Index>(oh) * ow);
                dwm.noalias() += gm * xm.transpose();
            } else {
                dwm.noalias() += gm * col.transpose();
            }
        }
        if (!(want_input_grad || li > 0)) return {};
        Tensor dx(x.c, x.h, x.w);
        const auto W = weight_matrix(model.weights(li), s);
        if (direct) {
            Eigen::Map<RowMat> dxm(dx.v.data(), s.in_channels, static_cast<Eigen::Index>(oh) * ow);
            dxm.noalias() = W.transpose() * gm;
        } else {
            const RowMat dcol = W.transpose() * gm;
            col2im(dcol, s, oh, ow, dx);
        }
        g = std::move(dx);
    }
    return g;
}

BBox anchor_box(const AnchorShape& a, double cx, double cy) {
    return {cx - 0.5 * a.width, cy - 0.5 * a.height, cx + 0.5 * a.width, cy + 0.5 * a.height};
}

BBox decode_box(const AnchorShape& a, double cx, double cy, const double* d) {
    const double bx = cx + d[0] * a.width;
    const double by = cy + d[1] * a.height;
    const double bw = a.width * std::exp(std::clamp(d[2], -kMaxLogScale, kMaxLogScale));
    const double bh = a.height * std::exp(std::clamp(d[3], -kMaxLogScale, kMaxLogScale));
    return {bx - 0.5 * bw, by - 0.5 * bh, bx + 0.5 * bw, by + 0.5 * bh};
}

RawOutput decode(const Architecture& arch, const Tensor& head) {
    const int A = static_cast<int>(arch.anchors.size());
    const int V = arch.values_per_anchor();
    const int C = arch.num_classes;
    const double stride = arch.stride();
    RawOutput out;
    out.grid_width = head.w;
    out.grid_height = head.h;
    out.head = head.v;
    out.candidates.reserve(static_cast<std::size_t>(head.h) * head.w * A);
    for (int gy = 0; gy < head.h; ++gy) {
        for (int gx = 0; gx < head.w; ++gx) {
            const double cx = (gx + 0.5) * stride, cy = (gy + 0.5) * stride;
            for (int a = 0; a < A; ++a) {
                RawCandidate cand;
                cand.confidence.resize(C);
                for (int c = 0; c < C; ++c) cand.confidence[c] = sigmoid(head.at(a * V + c, gy, gx));
                double d[4];
                for (int k = 0; k < 4; ++k) d[k] = head.at(a * V + C + k, gy, gx);
                cand.bbox = decode_box(arch.anchors[a], cx, cy, d);
                out.candidates.push_back(std::move(cand));
            }
        }
    }
    return out;
}

Tensor head_gradient(const Architecture& arch, const RawOutput& raw, const RawGradient& grad) {
    const int A = static_cast<int>(arch.anchors.size());
    const int V = arch.values_per_anchor();
    const int C = arch.num_classes;
    Tensor g(arch.head_channels(), raw.grid_height, raw.grid_width);
    for (int gy = 0; gy < raw.grid_height; ++gy) {
        for (int gx = 0; gx < raw.grid_width; ++gx) {
            for (int a = 0; a < A; ++a) {
                const std::size_t cand = (static_cast<std::size_t>(gy) * raw.grid_width + gx) * A + a;
                for (int c = 0; c < C; ++c) g.at(a * V + c, gy, gx) = grad.logits[cand * C + c];
                for (int k = 0; k < 4; ++k) g.at(a * V + C + k, gy, gx) = grad.deltas[cand * 4 + k];
            }
        }
    }
    return g;
}

}  // namespace detail

// ---- boxes ------------------------------------------------------------------------------

double iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin));
    const double iy = std::max(0.0, std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin));
    const double inter = ix * iy;
    if (inter <= 0.0) return 0.0;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

// ---- architecture -----------------------------------------------------------------------

int Architecture::stride() const {
    int s = 1;
    for (const auto& l : layers) s *= l.stride;
    return s;
}

void Architecture::validate() const {
    if (layers.empty()) throw InvalidParameter("architecture has no layers");
    if (num_classes < 1) throw InvalidParameter("architecture needs at least one class");
    if (anchors.empty()) throw InvalidParameter("architecture needs at least one anchor");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.in_channels < 1 || l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.padding < 0) {
            throw InvalidParameter("invalid conv spec at layer " + std::to_string(i));
        }
        if (i > 0 && l.in_channels != layers[i - 1].out_channels) {
            throw InvalidParameter("channel mismatch at layer " + std::to_string(i));
        }
        if (2 * l.padding != l.kernel - 1) throw InvalidParameter("only 'same' padding is supported");
    }
    if (layers.back().out_channels != head_channels()) {
        throw InvalidParameter("head layer must output anchors * (classes + 4) channels");
    }
    for (const auto& a : anchors) {
        if (!(a.width > 0.0 && a.height > 0.0)) throw InvalidParameter("anchor sizes must be positive");
    }
}

Architecture toy_architecture() {
    Architecture arch;
    arch.num_classes = 2;
    arch.anchors = {{14, 14}, {24, 14}, {38, 20}, {18, 28}};
    const auto act = Activation::LeakyRelu;
    arch.layers = {
        {3, 16, 3, 2, 1, act},
        {16, 32, 3, 2, 1, act},
        {32, 32, 3, 2, 1, act},
        {32, 32, 3, 1, 1, act},
        {32, arch.head_channels(), 1, 1, 0, Activation::Identity},
    };
    return arch;
}

// ---- model ------------------------------------------------------------------------------

DetectorModel::DetectorModel(Architecture arch) : arch_(std::move(arch)) {
    arch_.validate();
    for (const auto& l : arch_.layers) {
        weights_.emplace_back(static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel, 0.0);
        biases_.emplace_back(l.out_channels, 0.0);
    }
}

void DetectorModel::initialize(std::uint64_t seed, double class_bias) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t l = 0; l < arch_.layers.size(); ++l) {
        const auto& s = arch_.layers[l];
        const bool head = l + 1 == arch_.layers.size();
        const double fan_in = static_cast<double>(s.in_channels) * s.kernel * s.kernel;
        const double std_dev = head ? 0.01 : std::sqrt(2.0 / fan_in);
        for (double& w : weights_[l]) w = std_dev * normal(rng);
        std::fill(biases_[l].begin(), biases_[l].end(), 0.0);
        if (head) {
            const int V = arch_.values_per_anchor();
            for (std::size_t a = 0; a < arch_.anchors.size(); ++a) {
                for (int c = 0; c < arch_.num_classes; ++c) biases_[l][a * V + c] = class_bias;
            }
        }
    }
}

std::size_t DetectorModel::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
    return n;
}

double RawOutput::logit(std::size_t candidate, int cls, int num_classes, int anchors) const {
    const std::size_t a = candidate % anchors;
    const std::size_t cell = candidate / anchors;
    const std::size_t channel = a * (num_classes + 4) + cls;
    return head[channel * grid_width * grid_height + cell];
}

// ---- inference --------------------------------------------------------------------------

RawOutput detect_raw(const DetectorModel& model, const Image& image) {
    detail::check_input(model.architecture(), image);
    detail::ForwardTrace trace;
    detail::forward(model, detail::image_to_tensor(image), trace);
    return detail::decode(model.architecture(), trace.output);
}

std::vector<Detection> non_max_suppression(std::vector<Detection> dets, double iou_threshold) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
    std::vector<Detection> kept;
    for (std::size_t i : order) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.class_id == dets[i].class_id && iou(k.bbox, dets[i].bbox) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(dets[i]);
    }
    return kept;
}

std::vector<Detection> postprocess(const RawOutput& raw, double score_threshold, double nms_iou) {
    std::vector<Detection> dets;
    for (const auto& c : raw.candidates) {
        const auto best = std::max_element(c.confidence.begin(), c.confidence.end());
        if (*best > score_threshold) {
            dets.push_back({c.bbox, static_cast<int>(best - c.confidence.begin()), *best});
        }
    }
    return non_max_suppression(std::move(dets), nms_iou);
}

std::vector<Detection> detect(const DetectorModel& model, const Image& image) {
    return postprocess(detect_raw(model, image), model.score_threshold, model.nms_iou);
}

InputGradient input_gradient(const DetectorModel& model, const Image& image, const LossSelector& selector) {
    if (selector.mode != DetectMode::Raw) {
        throw ContractError("input_gradient: eval-mode (thresholded + NMS) outputs are not differentiable");
    }
    if (!selector.evaluate) throw InvalidParameter("input_gradient: empty loss selector");
    const auto& arch = model.architecture();
    detail::check_input(arch, image);
    detail::ForwardTrace trace;
    detail::forward(model, detail::image_to_tensor(image), trace);

    InputGradient out;
    out.raw = detail::decode(arch, trace.output);
    RawGradient rg;
    rg.logits.assign(out.raw.candidates.size() * arch.num_classes, 0.0);
    rg.deltas.assign(out.raw.candidates.size() * 4, 0.0);
    out.loss = selector.evaluate(out.raw, rg);

    // Chain box-delta gradients through the dw/dh clamp.
    const int A = static_cast<int>(arch.anchors.size());
    for (std::size_t cand = 0; cand < out.raw.candidates.size(); ++cand) {
        for (int k = 2; k < 4; ++k) {
            const double d = out.raw.head[(static_cast<std::size_t>((cand % A) * arch.values_per_anchor() +
                                                                    arch.num_classes + k) *
                                           out.raw.grid_width * out.raw.grid_height) +
                                          cand / A];
            if (d < -4.0 || d > 4.0) rg.deltas[cand * 4 + k] = 0.0;
        }
    }
    const detail::Tensor gh = detail::head_gradient(arch, out.raw, rg);
    out.gradient = detail::tensor_to_image(detail::backward(model, trace, gh, nullptr, nullptr, true));
    return out;
}

// ---- persistence ------------------------------------------------------------------------

namespace {

constexpr char kMagic[6] = {'P', 'G', 'A', 'D', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::LeakyRelu: return "leaky_relu";
    }
    return "identity";
}

Activation activation_from(const std::string& s) {
    if (s == "identity") return Activation::Identity;
    if (s == "relu") return Activation::Relu;
    if (s == "leaky_relu") return Activation::LeakyRelu;
    throw ParseError("unknown activation '" + s + "'", ParseError::Location::Record, 0);
}

}  // namespace

void save_detector(const DetectorModel& model, const std::filesystem::path& path) {
    const auto& arch = model.architecture();
    nlohmann::json d;
    d["num_classes"] = arch.num_classes;
    d["score_threshold"] = model.score_threshold;
    d["nms_iou"] = model.nms_iou;
    for (const auto& a : arch.anchors) d["anchors"].push_back({a.width, a.height});
    for (const auto& l : arch.layers) {
        d["layers"].push_back({{"in", l.in_channels},
                               {"out", l.out_channels},
                               {"kernel", l.kernel},
                               {"stride", l.stride},
                               {"padding", l.padding},
                               {"activation", activation_name(l.activation)}});
    }
    const std::string text = d.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t header[2] = {kVersion, static_cast<std::uint32_t>(text.size())};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
        const auto& w = model.weights(l);
        const auto& b = model.biases(l);
        out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(double)));
    }
}

DetectorModel load_detector(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    char magic[sizeof kMagic];
    std::uint32_t header[2];
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw ParseError("not a detector weight file", ParseError::Location::Record, 0);
    }
    if (header[0] != kVersion) {
        throw ParseError("unsupported detector file version " + std::to_string(header[0]), ParseError::Location::Record, 0);
    }
    std::string text(header[1], '\0');
    in.read(text.data(), static_cast<std::streamsize>(text.size()));
    if (!in) throw ParseError("truncated detector descriptor", ParseError::Location::Record, 0);
    const auto d = nlohmann::json::parse(text);

    Architecture arch;
    arch.num_classes = d.at("num_classes");
    for (const auto& a : d.at("anchors")) arch.anchors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
    for (const auto& l : d.at("layers")) {
        arch.layers.push_back({l.at("in"), l.at("out"), l.at("kernel"), l.at("stride"), l.at("padding"),
                               activation_from(l.at("activation"))});
    }
    DetectorModel model(arch);
    model.score_threshold = d.at("score_threshold");
    model.nms_iou = d.at("nms_iou");
    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
        auto& w = model.weights(l);
        auto& b = model.biases(l);
        in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
        in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(double)));
        if (!in) throw ParseError("truncated detector weights", ParseError::Location::Record, l);
    }
    return model;
}

}  // namespace pga
