#include "pga/errors.hpp"
#include "pga/evaluate.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace pga {

namespace {
constexpr double kStepTolerance = 1e-9;
}

void ViewGrid::validate() const {
    if (distances.empty() || pitches.empty()) throw InvalidParameter("view grid needs distances and pitches");
    if (!(azimuth_step > 0.0) || azimuth_step > 360.0) throw InvalidParameter("azimuth_step must be in (0, 360]");
    const double n = 360.0 / azimuth_step;
    if (std::abs(n - std::round(n)) > kStepTolerance * n) {
        throw InvalidParameter("azimuth_step " + std::to_string(azimuth_step) + " does not divide 360");
    }
    if (!std::isfinite(azimuth_offset)) throw InvalidParameter("azimuth_offset must be finite");
    for (double d : distances) {
        if (!(d > 0.0)) throw InvalidParameter("grid distances must be positive");
    }
    for (double p : pitches) {
        if (!(p >= 0.0 && p < 90.0)) throw InvalidParameter("grid pitches must be in [0, 90)");
    }
}

std::size_t ViewGrid::azimuth_count() const {
    return static_cast<std::size_t>(std::llround(360.0 / azimuth_step));
}

std::vector<GridView> grid_views(const ViewGrid& grid) {
    grid.validate();
    std::vector<GridView> out;
    out.reserve(grid.size());
    for (double d : grid.distances) {
        for (double p : grid.pitches) {
            for (std::size_t a = 0; a < grid.azimuth_count(); ++a) {
                const double az = grid.azimuth_offset + static_cast<double>(a) * grid.azimuth_step;
                out.push_back({make_viewpoint(grid.target_center, d, p, az, grid.intrinsics), d, p, az});
            }
        }
    }
    return out;
}

std::vector<CameraView> generate_view_grid(const ViewGrid& grid) {
    std::vector<CameraView> out;
    for (auto& v : grid_views(grid)) out.push_back(v.camera);
    return out;
}

namespace {

Intrinsics toy_intrinsics() { return {56.0, 56.0, 32.0, 32.0, 64, 64}; }

}  // namespace

ViewGrid grid_preset(const std::string& name) {
    ViewGrid g;
    g.intrinsics = toy_intrinsics();
    g.target_center = Vec3(0.0, 0.0, 0.65);
    if (name == "toy" || name == "toy-heldout") {
        g.distances = {6.0, 9.0};
        g.pitches = {20.0, 35.0, 50.0};
        g.azimuth_step = 10.0;
        g.azimuth_offset = name == "toy" ? 0.0 : 5.0;
    } else if (name == "single-view") {
        g.distances = {6.0};
        g.pitches = {35.0};
        g.azimuth_step = 360.0;
    } else if (name == "full") {
        g.distances = {5.0, 7.0, 9.0, 11.0};
        g.pitches = {20.0, 30.0, 40.0, 50.0, 60.0};
        g.azimuth_step = 10.0;
    } else {
        throw InvalidParameter("unknown grid preset '" + name + "'");
    }
    return g;
}

std::vector<std::string> grid_preset_names() { return {"toy", "toy-heldout", "single-view", "full"}; }

std::string view_grid_to_json(const ViewGrid& g) {
    nlohmann::ordered_json j;
    j["distances"] = g.distances;
    j["pitches"] = g.pitches;
    j["azimuth_step"] = g.azimuth_step;
    j["azimuth_offset"] = g.azimuth_offset;
    j["intrinsics"] = {{"fx", g.intrinsics.fx}, {"fy", g.intrinsics.fy},       {"cx", g.intrinsics.cx},
                       {"cy", g.intrinsics.cy}, {"width", g.intrinsics.width}, {"height", g.intrinsics.height}};
    j["target_center"] = {g.target_center[0], g.target_center[1], g.target_center[2]};
    return j.dump();
}

ViewGrid view_grid_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        ViewGrid g;
        g.distances = j.at("distances").get<std::vector<double>>();
        g.pitches = j.at("pitches").get<std::vector<double>>();
        g.azimuth_step = j.at("azimuth_step");
        g.azimuth_offset = j.value("azimuth_offset", 0.0);
        const auto& in = j.at("intrinsics");
        g.intrinsics = {in.at("fx"), in.at("fy"), in.at("cx"), in.at("cy"), in.at("width"), in.at("height")};
        const auto& t = j.at("target_center");
        g.target_center = Vec3(t.at(0), t.at(1), t.at(2));
        g.validate();
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidParameter(std::string("bad view grid JSON: ") + e.what());
    }
}

}  // namespace pga
