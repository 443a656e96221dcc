#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfx/light_field.hpp"
#include "lfx/optics.hpp"

namespace lfx::pipeline {

namespace fs = std::filesystem;

// .lf4d: "LF4D" | u32 C, U, V, Y, X | u32 dtype tag (1 = float32) |
// float32 little-endian samples in canonical [c, u, v, y, x] order.
inline constexpr std::uint32_t kDtypeFloat32 = 1;

void save_lf4d(const fs::path& path, const LightField4D<double>& lf);
LightField4D<double> load_lf4d(const fs::path& path);

// Planar image with values in [0, 1]; one plane per channel.
struct PngImage {
  std::vector<Image<double>> planes;
  int bit_depth = 8;
};

PngImage read_png(const fs::path& path);
// Values are clamped to [0, 1] and quantized to 8 or 16 bits.
void write_png(const fs::path& path, const std::vector<Image<double>>& planes, int bit_depth);
inline void write_png(const fs::path& path, const Image<double>& gray, int bit_depth) {
  write_png(path, std::vector<Image<double>>{gray}, bit_depth);
}

// Directory of view_u{i}_v{j}.png plus meta.json {U, V, channels, bit_depth}.
void save_png_grid(const fs::path& dir, const LightField4D<double>& lf, int bit_depth = 16);
LightField4D<double> load_png_grid(const fs::path& dir);

// .lf4d file or PNG-grid directory.
LightField4D<double> load_light_field(const fs::path& path);
void save_light_field(const fs::path& path, const LightField4D<double>& lf);

// {"scenes": [path, ...]} with paths relative to the manifest. load_manifest
// returns them resolved against the manifest directory; save_manifest writes
// relative entries as given and absolute ones relative to the manifest.
struct DatasetManifest {
  std::vector<fs::path> scenes;
};

DatasetManifest load_manifest(const fs::path& path);
void save_manifest(const fs::path& path, const DatasetManifest& manifest);

nlohmann::json read_json(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

// Optics: {z0, baseline, pixel_pitch, U, V, Y, X}.
optics::OpticsConfig optics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const optics::OpticsConfig& o);

// Scene: {"background": b, "layers": [{"depth", "texture", "extent": [w, h],
// "center": [x, y], "opacity", "out_of_bounds"}]}. "texture" is a PNG path
// (relative to base_dir) or {"noise": seed, "size": n, "smoothness": k};
// "opacity" is an optional PNG mask path (nonzero = opaque).
optics::SceneSpec scene_from_json(const nlohmann::json& j, const fs::path& base_dir);

// Smooth value-noise texture in [0, 1], used for synthetic scenes.
Image<double> noise_texture(std::uint64_t seed, std::size_t size, std::size_t smoothness);

}  // namespace lfx::pipeline
