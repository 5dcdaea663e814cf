#include "pga/ply_io.hpp"

#include "pga/errors.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

namespace pga {
namespace {

constexpr const char* kLinearComment = "pga_activations linear";

enum class ScalarType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

std::optional<ScalarType> parse_type(const std::string& name) {
    static const std::map<std::string, ScalarType> table = {
        {"char", ScalarType::Int8},     {"int8", ScalarType::Int8},     {"uchar", ScalarType::UInt8},
        {"uint8", ScalarType::UInt8},   {"short", ScalarType::Int16},   {"int16", ScalarType::Int16},
        {"ushort", ScalarType::UInt16}, {"uint16", ScalarType::UInt16}, {"int", ScalarType::Int32},
        {"int32", ScalarType::Int32},   {"uint", ScalarType::UInt32},   {"uint32", ScalarType::UInt32},
        {"float", ScalarType::Float32}, {"float32", ScalarType::Float32}, {"double", ScalarType::Float64},
        {"float64", ScalarType::Float64}};
    auto it = table.find(name);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

std::size_t type_size(ScalarType t) {
    switch (t) {
        case ScalarType::Int8:
        case ScalarType::UInt8: return 1;
        case ScalarType::Int16:
        case ScalarType::UInt16: return 2;
        case ScalarType::Int32:
        case ScalarType::UInt32:
        case ScalarType::Float32: return 4;
        case ScalarType::Float64: return 8;
    }
    return 0;
}

template <typename T>
T load_le(const unsigned char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

double decode(ScalarType t, const unsigned char* p) {
    switch (t) {
        case ScalarType::Int8: return load_le<std::int8_t>(p);
        case ScalarType::UInt8: return load_le<std::uint8_t>(p);
        case ScalarType::Int16: return load_le<std::int16_t>(p);
        case ScalarType::UInt16: return load_le<std::uint16_t>(p);
        case ScalarType::Int32: return load_le<std::int32_t>(p);
        case ScalarType::UInt32: return load_le<std::uint32_t>(p);
        case ScalarType::Float32: return load_le<float>(p);
        case ScalarType::Float64: return load_le<double>(p);
    }
    return 0.0;
}

struct Property {
    std::string name;
    ScalarType type;
    std::size_t offset;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
    std::size_t stride = 0;
};

struct Header {
    std::vector<Element> elements;
    bool linear_activations = false;
    std::optional<Vec3> background;
};

std::vector<std::string> split_words(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> words;
    for (std::string w; ss >> w;) words.push_back(w);
    return words;
}

double parse_double(const std::string& s, std::size_t line) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError("malformed number '" + s + "'", ParseError::Location::Line, line);
    }
    return v;
}

Header read_header(std::istream& in) {
    Header h;
    std::string line;
    std::size_t line_no = 0;
    auto next = [&]() {
        if (!std::getline(in, line)) {
            throw ParseError("unexpected end of header", ParseError::Location::Line, line_no + 1);
        }
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
    };
    next();
    if (line != "ply") throw ParseError("missing 'ply' magic", ParseError::Location::Line, line_no);
    bool have_format = false;
    while (true) {
        next();
        const auto words = split_words(line);
        if (words.empty()) continue;
        if (words[0] == "end_header") break;
        if (words[0] == "format") {
            if (words.size() != 3 || words[1] != "binary_little_endian") {
                throw ParseError("unsupported format '" + line + "' (binary_little_endian required)",
                                 ParseError::Location::Line, line_no);
            }
            have_format = true;
        } else if (words[0] == "comment" || words[0] == "obj_info") {
            const std::string body = line.size() > 8 ? line.substr(8) : std::string();
            if (body == kLinearComment) h.linear_activations = true;
            if (words.size() == 5 && words[1] == "background_color") {
                h.background = Vec3(parse_double(words[2], line_no), parse_double(words[3], line_no),
                                     parse_double(words[4], line_no));
            }
        } else if (words[0] == "element") {
            if (words.size() != 3) throw ParseError("malformed element line", ParseError::Location::Line, line_no);
            Element e;
            e.name = words[1];
            std::uint64_t count = 0;
            auto [ptr, ec] = std::from_chars(words[2].data(), words[2].data() + words[2].size(), count);
            if (ec != std::errc() || ptr != words[2].data() + words[2].size()) {
                throw ParseError("malformed element count", ParseError::Location::Line, line_no);
            }
            e.count = count;
            h.elements.push_back(std::move(e));
        } else if (words[0] == "property") {
            if (h.elements.empty()) throw ParseError("property before element", ParseError::Location::Line, line_no);
            if (words.size() >= 2 && words[1] == "list") {
                throw ParseError("list properties are not supported", ParseError::Location::Line, line_no);
            }
            if (words.size() != 3) throw ParseError("malformed property line", ParseError::Location::Line, line_no);
            auto type = parse_type(words[1]);
            if (!type) throw ParseError("unknown property type '" + words[1] + "'", ParseError::Location::Line, line_no);
            auto& e = h.elements.back();
            e.properties.push_back({words[2], *type, e.stride});
            e.stride += type_size(*type);
        } else {
            throw ParseError("unrecognized header line '" + line + "'", ParseError::Location::Line, line_no);
        }
    }
    if (!have_format) throw ParseError("missing format line", ParseError::Location::Line, line_no);
    return h;
}

int degree_from_rest_count(std::size_t rest) {
    for (int d = 0; d <= kMaxShDegree; ++d) {
        if (rest == static_cast<std::size_t>(3 * (sh_basis_count(d) - 1))) return d;
    }
    return -1;
}

std::string format_double(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void write_scene_ply(std::ostream& out, const GaussianScene& scene, PlyPrecision precision) {
    scene.validate();
    const int basis = sh_basis_count(scene.sh_degree);
    const int rest_per_channel = basis - 1;
    const char* type = precision == PlyPrecision::Float32 ? "float" : "double";

    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\n";
    header << "comment " << kLinearComment << "\n";
    header << "comment background_color " << format_double(scene.background_color[0]) << ' '
           << format_double(scene.background_color[1]) << ' ' << format_double(scene.background_color[2]) << "\n";
    header << "element vertex " << scene.size() << "\n";
    std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int i = 0; i < 3 * rest_per_channel; ++i) names.push_back("f_rest_" + std::to_string(i));
    for (const char* n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}) {
        names.emplace_back(n);
    }
    for (const auto& n : names) header << "property " << type << ' ' << n << "\n";
    header << "property uchar is_object\nend_header\n";
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));

    std::vector<double> row;
    std::vector<unsigned char> bytes;
    for (const auto& g : scene.gaussians) {
        row.clear();
        row.insert(row.end(), {g.mean.x(), g.mean.y(), g.mean.z(), 0.0, 0.0, 0.0, g.sh[0], g.sh[1], g.sh[2]});
        for (int c = 0; c < 3; ++c) {
            for (int k = 1; k < basis; ++k) row.push_back(g.sh[3 * k + c]);
        }
        row.push_back(g.opacity);
        row.insert(row.end(), {g.scale.x(), g.scale.y(), g.scale.z()});
        row.insert(row.end(), {g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]});

        bytes.clear();
        for (double v : row) {
            if (precision == PlyPrecision::Float32) {
                const float f = static_cast<float>(v);
                const auto* p = reinterpret_cast<const unsigned char*>(&f);
                bytes.insert(bytes.end(), p, p + sizeof f);
            } else {
                const auto* p = reinterpret_cast<const unsigned char*>(&v);
                bytes.insert(bytes.end(), p, p + sizeof v);
            }
        }
        bytes.push_back(g.is_object ? 1 : 0);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw std::runtime_error("failed to write PLY data");
}

GaussianScene read_scene_ply(std::istream& in) {
    const Header header = read_header(in);

    const Element* vertex = nullptr;
    std::size_t skip_before = 0;
    for (const auto& e : header.elements) {
        if (e.name == "vertex") {
            vertex = &e;
            break;
        }
        skip_before += e.count * e.stride;
    }
    if (!vertex) throw SchemaError("vertex");

    std::map<std::string, const Property*> by_name;
    for (const auto& p : vertex->properties) by_name[p.name] = &p;
    auto require = [&](const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw SchemaError(name);
        return it->second;
    };

    const Property* px = require("x");
    const Property* py = require("y");
    const Property* pz = require("z");
    const Property* dc[3] = {require("f_dc_0"), require("f_dc_1"), require("f_dc_2")};
    const Property* popacity = require("opacity");
    const Property* pscale[3] = {require("scale_0"), require("scale_1"), require("scale_2")};
    const Property* prot[4] = {require("rot_0"), require("rot_1"), require("rot_2"), require("rot_3")};

    std::size_t rest_count = 0;
    while (by_name.count("f_rest_" + std::to_string(rest_count))) ++rest_count;
    const int degree = degree_from_rest_count(rest_count);
    if (degree < 0) {
        throw SchemaError("f_rest_" + std::to_string(rest_count) + " (found " + std::to_string(rest_count) +
                          " f_rest attributes, which matches no SH degree)");
    }
    std::vector<const Property*> rest;
    for (std::size_t i = 0; i < rest_count; ++i) rest.push_back(by_name["f_rest_" + std::to_string(i)]);
    const Property* pobject = by_name.count("is_object") ? by_name["is_object"] : nullptr;

    in.ignore(static_cast<std::streamsize>(skip_before));
    if (!in) throw ParseError("truncated data before vertex element", ParseError::Location::Record, 0);

    GaussianScene scene;
    scene.sh_degree = degree;
    if (header.background) scene.background_color = *header.background;
    scene.gaussians.reserve(vertex->count);
    const int basis = sh_basis_count(degree);
    std::vector<unsigned char> buf(vertex->stride);

    for (std::size_t r = 0; r < vertex->count; ++r) {
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
            throw ParseError("truncated vertex data", ParseError::Location::Record, r);
        }
        auto get = [&](const Property* p) { return decode(p->type, buf.data() + p->offset); };

        Gaussian3D g;
        g.mean = {get(px), get(py), get(pz)};
        g.sh.assign(3 * basis, 0.0);
        for (int c = 0; c < 3; ++c) g.sh[c] = get(dc[c]);
        for (int c = 0; c < 3; ++c) {
            for (int k = 1; k < basis; ++k) g.sh[3 * k + c] = get(rest[c * (basis - 1) + (k - 1)]);
        }
        const double raw_opacity = get(popacity);
        const Vec3 raw_scale{get(pscale[0]), get(pscale[1]), get(pscale[2])};
        if (header.linear_activations) {
            g.opacity = raw_opacity;
            g.scale = raw_scale;
        } else {
            g.opacity = sigmoid(raw_opacity);
            g.scale = raw_scale.array().exp();
        }
        const Vec4 q{get(prot[0]), get(prot[1]), get(prot[2]), get(prot[3])};
        if (!q.allFinite() || q.norm() == 0.0) throw ParseError("degenerate rotation", ParseError::Location::Record, r);
        // Quaternions already unit to storage precision are kept bit-for-bit.
        g.rotation = std::abs(q.norm() - 1.0) <= 1e-6 ? q : Vec4(q / q.norm());
        g.is_object = pobject ? get(pobject) != 0.0 : false;

        if (!g.mean.allFinite() || !std::isfinite(g.opacity) || !g.scale.allFinite()) {
            throw ParseError("non-finite vertex attribute", ParseError::Location::Record, r);
        }
        if (g.opacity < 0.0 || g.opacity > 1.0) throw ParseError("opacity outside [0, 1]", ParseError::Location::Record, r);
        if ((g.scale.array() <= 0.0).any()) throw ParseError("non-positive scale", ParseError::Location::Record, r);
        scene.gaussians.push_back(std::move(g));
    }
    return scene;
}

void save_scene(const GaussianScene& scene, const std::filesystem::path& path, PlyPrecision precision) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    write_scene_ply(out, scene, precision);
}

GaussianScene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    return read_scene_ply(in);
}

}  // namespace pga
