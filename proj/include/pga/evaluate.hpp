#pragma once

#include "pga/camera.hpp"
#include "pga/detector.hpp"
#include "pga/scene.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pga {

// ---- view grid --------------------------------------------------------------------------

struct ViewGrid {
    std::vector<double> distances;
    std::vector<double> pitches;  // degrees
    double azimuth_step = 10.0;   // degrees, must divide 360
    double azimuth_offset = 0.0;  // degrees added to every azimuth
    Intrinsics intrinsics;
    Vec3 target_center = Vec3::Zero();

    void validate() const;
    std::size_t azimuth_count() const;
    std::size_t size() const { return distances.size() * pitches.size() * azimuth_count(); }
};

struct GridView {
    CameraView camera;
    double distance = 0.0;
    double pitch = 0.0;
    double azimuth = 0.0;
};

/// Views in (distance, pitch, azimuth) lexicographic order. Throws InvalidParameter for an
/// invalid grid.
std::vector<GridView> grid_views(const ViewGrid& grid);
std::vector<CameraView> generate_view_grid(const ViewGrid& grid);

/// Named grids: "toy" (2 distances x 3 pitches x 10 deg), "toy-heldout" (same, azimuths
/// shifted by 5 deg), "single-view", "full" (4 distances x 5 pitches x 10 deg).
ViewGrid grid_preset(const std::string& name);
std::vector<std::string> grid_preset_names();

std::string view_grid_to_json(const ViewGrid& grid);
ViewGrid view_grid_from_json(const std::string& text);

// ---- weather ----------------------------------------------------------------------------

/// Global photometric preset applied to rendered images: clamp(contrast * p + brightness).
struct WeatherPreset {
    std::string name;
    double contrast = 1.0;
    double brightness = 0.0;
};

WeatherPreset weather_preset(const std::string& name);  // "sunny" or "cloudy"
Image apply_weather(const Image& image, const WeatherPreset& w);

// ---- evaluation -------------------------------------------------------------------------

enum class EvalMode { Clean, Camouflaged };

const char* to_string(EvalMode m);
EvalMode eval_mode_from_string(const std::string& s);

struct EvalOptions {
    /// Zero-order coefficients of the unattacked scene. Clean mode renders with them; camouflaged
    /// mode renders I_ori with them. When absent the scene's own coefficients are used.
    std::optional<std::vector<double>> original_k0;
    std::vector<std::string> weathers{"sunny"};
    std::optional<std::filesystem::path> png_dir;
    double mask_threshold = 0.5;
};

struct ViewRecord {
    std::size_t index = 0;
    std::string weather;
    double distance = 0.0;
    double pitch = 0.0;
    double azimuth = 0.0;
    std::optional<GroundTruth> gt;  // absent when the object covers no pixel
    std::vector<Detection> detections;
};

struct CellAp {
    std::string weather;
    double distance = 0.0;
    double pitch = 0.0;
    std::optional<double> ap;  // absent when the cell has no ground truth
};

struct EvalReport {
    std::string mode;
    std::vector<std::string> weathers;
    std::vector<ViewRecord> views;
    std::vector<CellAp> cells;
    double overall_ap = 0.0;  // pooled over every view and weather; 0 when nothing has ground truth
    std::vector<std::pair<std::string, double>> overall_by_weather;
    std::string scene_hash;
    std::string grid_json;
    bool complete = true;
    std::vector<std::string> errors;
};

EvalReport evaluate(const GaussianScene& scene, const DetectorModel& detector, const ViewGrid& grid, EvalMode mode,
                    const EvalOptions& opts = {});

/// Recomputes cells and overall AP from the per-view records.
void recompute_report(EvalReport& report);

/// SHA-256 over the float64 PLY serialization of the scene.
std::string scene_hash(const GaussianScene& scene);

std::string report_to_json(const EvalReport& report, int indent = 2);
EvalReport report_from_json(const std::string& text);

/// Rows are distances, columns weathers (AP in percent, pooled over pitches).
std::string report_distance_csv(const EvalReport& report);
/// Rows are pitches, columns weathers.
std::string report_pitch_csv(const EvalReport& report);

/// Writes report.json, table_distance.csv and table_pitch.csv into `directory`.
void write_report(const EvalReport& report, const std::filesystem::path& directory);

}  // namespace pga
