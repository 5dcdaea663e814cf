#include "pga/evaluate.hpp"

#include "pga/attack.hpp"
#include "pga/errors.hpp"
#include "pga/metrics.hpp"
#include "pga/ply_io.hpp"
#include "pga/renderer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pga {

WeatherPreset weather_preset(const std::string& name) {
    if (name == "sunny") return {"sunny", 1.0, 0.0};
    if (name == "cloudy") return {"cloudy", 0.85, -0.08};
    throw InvalidParameter("unknown weather preset '" + name + "'");
}

Image apply_weather(const Image& image, const WeatherPreset& w) {
    Image out = image;
    if (w.contrast == 1.0 && w.brightness == 0.0) return out;
    for (double& v : out.data) v = std::clamp(w.contrast * v + w.brightness, 0.0, 1.0);
    return out;
}

const char* to_string(EvalMode m) { return m == EvalMode::Clean ? "clean" : "camouflaged"; }

EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "clean") return EvalMode::Clean;
    if (s == "camouflaged") return EvalMode::Camouflaged;
    throw InvalidParameter("unknown evaluation mode '" + s + "'");
}

std::string scene_hash(const GaussianScene& scene) {
    std::ostringstream ss;
    write_scene_ply(ss, scene, PlyPrecision::Float64);
    const std::string bytes = ss.str();
    return sha256_hex({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

namespace {

// AP over the records selected by `keep`; nullopt when they hold no ground truth.
template <class Pred>
std::optional<double> pooled_ap(const std::vector<ViewRecord>& views, Pred keep) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<GroundTruth>> gts;
    bool any_gt = false;
    for (const auto& v : views) {
        if (!keep(v)) continue;
        dets.push_back(v.detections);
        gts.emplace_back();
        if (v.gt) {
            gts.back().push_back(*v.gt);
            any_gt = any_gt || v.gt->class_id == kTargetClass;
        }
    }
    if (!any_gt) return std::nullopt;
    return ap_at_05(dets, gts, kTargetClass);
}

template <class T>
std::vector<T> unique_in_order(const std::vector<ViewRecord>& views, T ViewRecord::*field) {
    std::vector<T> out;
    for (const auto& v : views) {
        if (std::find(out.begin(), out.end(), v.*field) == out.end()) out.push_back(v.*field);
    }
    return out;
}

}  // namespace

void recompute_report(EvalReport& report) {
    report.cells.clear();
    report.overall_by_weather.clear();
    const auto distances = unique_in_order(report.views, &ViewRecord::distance);
    const auto pitches = unique_in_order(report.views, &ViewRecord::pitch);
    for (const auto& w : report.weathers) {
        for (double d : distances) {
            for (double p : pitches) {
                CellAp cell{w, d, p, pooled_ap(report.views, [&](const ViewRecord& v) {
                                return v.weather == w && v.distance == d && v.pitch == p;
                            })};
                report.cells.push_back(cell);
            }
        }
        report.overall_by_weather.emplace_back(
            w, pooled_ap(report.views, [&](const ViewRecord& v) { return v.weather == w; }).value_or(0.0));
    }
    report.overall_ap = pooled_ap(report.views, [](const ViewRecord&) { return true; }).value_or(0.0);
}

EvalReport evaluate(const GaussianScene& scene, const DetectorModel& detector, const ViewGrid& grid, EvalMode mode,
                    const EvalOptions& opts) {
    const std::vector<GridView> views = grid_views(grid);
    if (opts.weathers.empty()) throw InvalidParameter("evaluate: no weather presets");
    std::vector<WeatherPreset> weathers;
    for (const auto& w : opts.weathers) weathers.push_back(weather_preset(w));

    GaussianScene original = scene;
    if (opts.original_k0) {
        if (scene.object_count() == 0) throw InvalidParameter("evaluate: original coefficients given for a scene without objects");
        ZeroOrderView(original).assign(*opts.original_k0);
    }

    EvalReport report;
    report.mode = to_string(mode);
    report.weathers = opts.weathers;
    report.scene_hash = scene_hash(scene);
    report.grid_json = view_grid_to_json(grid);
    if (opts.png_dir) std::filesystem::create_directories(*opts.png_dir);

    std::vector<std::vector<ViewRecord>> per_weather(weathers.size());
    for (std::size_t i = 0; i < views.size(); ++i) {
        const GridView& gv = views[i];
        try {
            const RenderOutput clean = render(original, gv.camera);
            const Mask mask = mask_from_object_alpha(clean.object_alpha, opts.mask_threshold);
            Image image = clean.rgb;
            if (mode == EvalMode::Camouflaged) {
                image = composite_detect_image(render(scene, gv.camera).rgb, clean.rgb, mask);
            }
            const std::optional<GroundTruth> gt = ground_truth_from_mask(mask, kTargetClass);

            for (std::size_t w = 0; w < weathers.size(); ++w) {
                const Image shown = apply_weather(image, weathers[w]);
                ViewRecord rec;
                rec.index = i;
                rec.weather = weathers[w].name;
                rec.distance = gv.distance;
                rec.pitch = gv.pitch;
                rec.azimuth = gv.azimuth;
                rec.gt = gt;
                rec.detections = detect(detector, shown);
                if (opts.png_dir) {
                    char name[64];
                    std::snprintf(name, sizeof name, "%s_%04zu.png", weathers[w].name.c_str(), i);
                    write_png(shown, *opts.png_dir / name);
                }
                per_weather[w].push_back(std::move(rec));
            }
        } catch (const std::exception& e) {
            report.complete = false;
            report.errors.push_back("view " + std::to_string(i) + ": " + e.what());
        }
    }
    for (auto& w : per_weather) {
        for (auto& r : w) report.views.push_back(std::move(r));
    }
    recompute_report(report);
    return report;
}

// ---- serialization ----------------------------------------------------------------------

namespace {

nlohmann::ordered_json box_json(const BBox& b) { return {b.xmin, b.ymin, b.xmax, b.ymax}; }
BBox box_from(const nlohmann::ordered_json& j) { return {j.at(0), j.at(1), j.at(2), j.at(3)}; }

}  // namespace

std::string report_to_json(const EvalReport& r, int indent) {
    nlohmann::ordered_json j;
    j["mode"] = r.mode;
    j["weathers"] = r.weathers;
    j["overall_ap"] = r.overall_ap;
    for (const auto& [w, ap] : r.overall_by_weather) j["overall_by_weather"][w] = ap;
    j["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : r.cells) {
        nlohmann::ordered_json cj{{"weather", c.weather}, {"distance", c.distance}, {"pitch", c.pitch}};
        cj["ap"] = c.ap ? nlohmann::ordered_json(*c.ap) : nlohmann::ordered_json(nullptr);
        j["cells"].push_back(std::move(cj));
    }
    j["scene_hash"] = r.scene_hash;
    j["grid"] = nlohmann::ordered_json::parse(r.grid_json.empty() ? "null" : r.grid_json);
    j["complete"] = r.complete;
    j["errors"] = r.errors;
    j["views"] = nlohmann::ordered_json::array();
    for (const auto& v : r.views) {
        nlohmann::ordered_json vj{{"index", v.index},   {"weather", v.weather}, {"distance", v.distance},
                                  {"pitch", v.pitch},   {"azimuth", v.azimuth}};
        if (v.gt) vj["gt"] = {{"box", box_json(v.gt->bbox)}, {"class_id", v.gt->class_id}};
        else vj["gt"] = nullptr;
        vj["detections"] = nlohmann::ordered_json::array();
        for (const auto& d : v.detections) {
            vj["detections"].push_back({{"box", box_json(d.bbox)}, {"class_id", d.class_id}, {"confidence", d.confidence}});
        }
        j["views"].push_back(std::move(vj));
    }
    return j.dump(indent);
}

EvalReport report_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::ordered_json::parse(text);
        EvalReport r;
        r.mode = j.at("mode");
        r.weathers = j.at("weathers").get<std::vector<std::string>>();
        r.scene_hash = j.value("scene_hash", "");
        if (j.contains("grid") && !j["grid"].is_null()) r.grid_json = j["grid"].dump();
        r.complete = j.value("complete", true);
        r.errors = j.value("errors", std::vector<std::string>{});
        for (const auto& vj : j.at("views")) {
            ViewRecord v;
            v.index = vj.at("index");
            v.weather = vj.at("weather");
            v.distance = vj.at("distance");
            v.pitch = vj.at("pitch");
            v.azimuth = vj.at("azimuth");
            if (!vj.at("gt").is_null()) v.gt = GroundTruth{box_from(vj["gt"].at("box")), vj["gt"].at("class_id")};
            for (const auto& d : vj.at("detections")) {
                v.detections.push_back({box_from(d.at("box")), d.at("class_id"), d.at("confidence")});
            }
            r.views.push_back(std::move(v));
        }
        recompute_report(r);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidParameter(std::string("bad report JSON: ") + e.what());
    }
}

namespace {

std::string table_csv(const EvalReport& r, double ViewRecord::*field, const char* label) {
    std::ostringstream out;
    out << label;
    for (const auto& w : r.weathers) out << ',' << w;
    out << '\n';
    char buf[64];
    for (double key : unique_in_order(r.views, field)) {
        std::snprintf(buf, sizeof buf, "%g", key);
        out << buf;
        for (const auto& w : r.weathers) {
            const auto ap = pooled_ap(r.views, [&](const ViewRecord& v) { return v.weather == w && v.*field == key; });
            if (ap) {
                std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *ap);
                out << ',' << buf;
            } else {
                out << ',';
            }
        }
        out << '\n';
    }
    out << "average";
    for (const auto& [w, ap] : r.overall_by_weather) {
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * ap);
        out << ',' << buf;
    }
    out << '\n';
    return out.str();
}

}  // namespace

std::string report_distance_csv(const EvalReport& r) { return table_csv(r, &ViewRecord::distance, "distance"); }
std::string report_pitch_csv(const EvalReport& r) { return table_csv(r, &ViewRecord::pitch, "pitch"); }

void write_report(const EvalReport& report, const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory);
    std::ofstream(directory / "report.json") << report_to_json(report) << '\n';
    std::ofstream(directory / "table_distance.csv") << report_distance_csv(report);
    std::ofstream(directory / "table_pitch.csv") << report_pitch_csv(report);
}

}  // namespace pga
