#pragma once

#include "pga/scene.hpp"

#include <filesystem>
#include <iosfwd>

namespace pga {

enum class PlyPrecision { Float32, Float64 };

// Binary little-endian PLY with the usual splatting vertex layout:
//   x y z nx ny nz f_dc_0..2 f_rest_0..N opacity scale_0..2 rot_0..3 is_object
// f_rest is channel-major (all red coefficients, then green, then blue).
//
// Files written here carry "comment pga_activations linear": opacity and scale are the
// activated values. Files without that comment are treated as standard 3DGS exports
// (opacity as a logit, scale as a log), so reconstructions from other tools load as-is.
void write_scene_ply(std::ostream& out, const GaussianScene& scene, PlyPrecision precision = PlyPrecision::Float32);
GaussianScene read_scene_ply(std::istream& in);

void save_scene(const GaussianScene& scene, const std::filesystem::path& path,
                PlyPrecision precision = PlyPrecision::Float32);
GaussianScene load_scene(const std::filesystem::path& path);

}  // namespace pga
