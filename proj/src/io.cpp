#include "lfx/pipeline/io.hpp"

#include <png.h>

#include <csetjmp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include "lfx/detail/binary.hpp"
#include "lfx/pipeline/resize.hpp"

namespace lfx::pipeline {

namespace {

constexpr char kLfMagic[4] = {'L', 'F', '4', 'D'};

std::string view_name(std::size_t u, std::size_t v) {
  return "view_u" + std::to_string(u) + "_v" + std::to_string(v) + ".png";
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

void png_warn(png_structp, png_const_charp) {}

template <typename T>
T json_get(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (auto k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace

void save_lf4d(const fs::path& path, const LightField4D<double>& lf) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kLfMagic, 4);
  const auto& d = lf.dims();
  for (auto n : d.as_array()) lfx::detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(n));
  lfx::detail::write_le<std::uint32_t>(os, kDtypeFloat32);
  for (Eigen::Index i = 0; i < lf.data().size(); ++i)
    lfx::detail::write_le<float>(os, static_cast<float>(lf.data()[i]));
  if (!os) throw IoError("failed writing " + path.string());
}

LightField4D<double> load_lf4d(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kLfMagic, 4))
    throw IoError("not an LF4D file: " + path.string());
  LfDims d;
  d.c = lfx::detail::read_le<std::uint32_t>(is);
  d.u = lfx::detail::read_le<std::uint32_t>(is);
  d.v = lfx::detail::read_le<std::uint32_t>(is);
  d.y = lfx::detail::read_le<std::uint32_t>(is);
  d.x = lfx::detail::read_le<std::uint32_t>(is);
  if (!d.valid()) throw IoError("LF4D file has a zero dimension: " + path.string());
  const auto tag = lfx::detail::read_le<std::uint32_t>(is);
  if (tag != kDtypeFloat32) throw IoError("LF4D dtype tag " + std::to_string(tag) + " unsupported");
  std::vector<float> raw(d.size());
  if (!is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size() * sizeof(float))))
    throw IoError("truncated LF4D file: " + path.string());
  LightField4D<double> lf(d);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = lfx::detail::to_little(raw[i]);
    if (!std::isfinite(v)) throw IoError("LF4D file contains non-finite samples: " + path.string());
    lf.data()[Eigen::Index(i)] = v;
  }
  return lf;
}

PngImage read_png(const fs::path& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) throw IoError("png: out of memory");
  std::vector<unsigned char> buf;
  std::vector<png_bytep> ptrs;
  png_uint_32 rows = 0, cols = 0;
  int channels = 0, depth = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt or unreadable PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);
  rows = png_get_image_height(png, info);
  cols = png_get_image_width(png, info);
  channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * rows);
  ptrs.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) ptrs[r] = buf.data() + r * rowbytes;
  png_read_image(png, ptrs.data());
  png_destroy_read_struct(&png, &info, nullptr);

  PngImage img;
  img.bit_depth = depth;
  const double maxv = depth == 16 ? 65535.0 : 255.0;
  for (int c = 0; c < channels; ++c) img.planes.emplace_back(Eigen::Index(rows), Eigen::Index(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t x = 0; x < cols; ++x)
      for (int c = 0; c < channels; ++c) {
        const std::size_t k = x * std::size_t(channels) + std::size_t(c);
        const double raw = depth == 16 ? double((unsigned(ptrs[r][2 * k]) << 8) | ptrs[r][2 * k + 1])
                                       : double(ptrs[r][k]);
        img.planes[std::size_t(c)](Eigen::Index(r), Eigen::Index(x)) = raw / maxv;
      }
  return img;
}

void write_png(const fs::path& path, const std::vector<Image<double>>& planes, int bit_depth) {
  if (planes.empty() || (planes.size() != 1 && planes.size() != 3))
    throw ShapeError("write_png: need 1 or 3 planes");
  if (bit_depth != 8 && bit_depth != 16) throw ConfigError("write_png: bit depth must be 8 or 16");
  const auto rows = planes[0].rows(), cols = planes[0].cols();
  for (const auto& p : planes)
    if (p.rows() != rows || p.cols() != cols) throw ShapeError("write_png: plane sizes differ");
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path.string());
  const int nc = int(planes.size());
  const double maxv = bit_depth == 16 ? 65535.0 : 255.0;
  const std::size_t bpc = bit_depth == 16 ? 2 : 1;
  const std::size_t stride = std::size_t(cols) * std::size_t(nc) * bpc;
  std::vector<unsigned char> buf(stride * std::size_t(rows));
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index x = 0; x < cols; ++x)
      for (int c = 0; c < nc; ++c) {
        const double v = std::clamp(planes[std::size_t(c)](r, x), 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(v * maxv));
        const std::size_t k = std::size_t(r) * stride + (std::size_t(x) * std::size_t(nc) + std::size_t(c)) * bpc;
        if (bpc == 2) {
          buf[k] = static_cast<unsigned char>(q >> 8);
          buf[k + 1] = static_cast<unsigned char>(q & 0xff);
        } else {
          buf[k] = static_cast<unsigned char>(q);
        }
      }
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(rows));
  for (std::size_t r = 0; r < ptrs.size(); ++r) ptrs[r] = buf.data() + r * stride;

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) throw IoError("png: out of memory");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed encoding PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, png_uint_32(cols), png_uint_32(rows), bit_depth,
               nc == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_rows(png, info, ptrs.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::ferror(f.get())) throw IoError("failed writing " + path.string());
}

void save_png_grid(const fs::path& dir, const LightField4D<double>& lf, int bit_depth) {
  const auto& d = lf.dims();
  if (d.c != 1 && d.c != 3) throw ShapeError("png grid: light field must have 1 or 3 channels");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  for (std::size_t u = 0; u < d.u; ++u)
    for (std::size_t v = 0; v < d.v; ++v) {
      std::vector<Image<double>> planes;
      for (std::size_t c = 0; c < d.c; ++c) planes.emplace_back(lf.view(c, u, v));
      write_png(dir / view_name(u, v), planes, bit_depth);
    }
  nlohmann::json meta = {{"U", d.u}, {"V", d.v}, {"channels", d.c}, {"bit_depth", bit_depth}};
  write_text(dir / "meta.json", meta.dump(2) + "\n");
}

LightField4D<double> load_png_grid(const fs::path& dir) {
  const auto meta = read_json(dir / "meta.json");
  const auto U = json_get<std::size_t>(meta, "U", "meta.json");
  const auto V = json_get<std::size_t>(meta, "V", "meta.json");
  if (U == 0 || V == 0) throw ConfigError("meta.json: U and V must be >= 1");
  LightField4D<double> lf;
  for (std::size_t u = 0; u < U; ++u)
    for (std::size_t v = 0; v < V; ++v) {
      const auto img = read_png(dir / view_name(u, v));
      const auto& p0 = img.planes[0];
      if (u == 0 && v == 0)
        lf = LightField4D<double>(
            LfDims{img.planes.size(), U, V, std::size_t(p0.rows()), std::size_t(p0.cols())});
      const auto& d = lf.dims();
      if (img.planes.size() != d.c || std::size_t(p0.rows()) != d.y || std::size_t(p0.cols()) != d.x)
        throw ShapeError("png grid: view " + view_name(u, v) + " differs in size or channels");
      for (std::size_t c = 0; c < d.c; ++c) lf.view(c, u, v) = img.planes[c];
    }
  return lf;
}

LightField4D<double> load_light_field(const fs::path& path) {
  if (fs::is_directory(path)) return load_png_grid(path);
  if (!fs::exists(path)) throw IoError("no such file: " + path.string());
  return load_lf4d(path);
}

void save_light_field(const fs::path& path, const LightField4D<double>& lf) {
  if (path.extension() == ".lf4d") {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    save_lf4d(path, lf);
  } else {
    save_png_grid(path, lf, 16);
  }
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  const auto j = read_json(path);
  reject_unknown(j, {"scenes"}, "manifest");
  DatasetManifest m;
  const auto base = path.parent_path();
  for (const auto& s : json_get<std::vector<std::string>>(j, "scenes", "manifest")) {
    fs::path p(s);
    m.scenes.push_back(p.is_absolute() ? p : base / p);
  }
  if (m.scenes.empty()) throw ConfigError("manifest: no scenes listed");
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  nlohmann::json j;
  j["scenes"] = nlohmann::json::array();
  const auto base = path.parent_path();
  for (const auto& s : manifest.scenes)
    j["scenes"].push_back((s.is_absolute() ? fs::relative(s, fs::absolute(base)) : s).generic_string());
  write_text(path, j.dump(2) + "\n");
}

optics::OpticsConfig optics_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"z0", "baseline", "pixel_pitch", "U", "V", "Y", "X"}, "optics");
  optics::OpticsConfig o;
  const std::string w = "optics";
  if (j.contains("z0")) o.z0 = json_get<double>(j, "z0", w);
  if (j.contains("baseline")) o.baseline = json_get<double>(j, "baseline", w);
  if (j.contains("pixel_pitch")) o.pixel_pitch = json_get<double>(j, "pixel_pitch", w);
  if (j.contains("U")) o.U = json_get<std::size_t>(j, "U", w);
  if (j.contains("V")) o.V = json_get<std::size_t>(j, "V", w);
  if (j.contains("Y")) o.Y = json_get<std::size_t>(j, "Y", w);
  if (j.contains("X")) o.X = json_get<std::size_t>(j, "X", w);
  o.validate();
  return o;
}

nlohmann::json to_json(const optics::OpticsConfig& o) {
  return {{"z0", o.z0}, {"baseline", o.baseline}, {"pixel_pitch", o.pixel_pitch},
          {"U", o.U},   {"V", o.V},               {"Y", o.Y},
          {"X", o.X}};
}

Image<double> noise_texture(std::uint64_t seed, std::size_t size, std::size_t smoothness) {
  if (size == 0 || smoothness == 0) throw ConfigError("noise texture: size and smoothness must be >= 1");
  const std::size_t coarse = std::max<std::size_t>(2, size / smoothness);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Image<double> base(static_cast<Eigen::Index>(coarse), static_cast<Eigen::Index>(coarse));
  for (Eigen::Index i = 0; i < base.size(); ++i) base.data()[i] = dist(rng);
  return bicubic_resize_to(base, size, size).cwiseMax(0.0).cwiseMin(1.0);
}

optics::SceneSpec scene_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  reject_unknown(j, {"background", "layers"}, "scene");
  optics::SceneSpec s;
  if (j.contains("background")) s.background = json_get<double>(j, "background", "scene");
  if (!j.contains("layers") || !j.at("layers").is_array())
    throw ConfigError("scene: 'layers' must be an array");
  std::size_t idx = 0;
  for (const auto& l : j.at("layers")) {
    const std::string w = "scene layer " + std::to_string(idx++);
    reject_unknown(l, {"depth", "texture", "extent", "center", "opacity", "out_of_bounds"}, w);
    optics::LayerSpec layer;
    layer.depth = json_get<double>(l, "depth", w);
    auto& t = layer.texture;
    if (!l.contains("texture")) throw ConfigError(w + ": missing key 'texture'");
    const auto& tex = l.at("texture");
    if (tex.is_string()) {
      const auto img = read_png(base_dir / tex.get<std::string>());
      t.values = img.planes[0];
      if (img.planes.size() == 3)
        t.values = (img.planes[0] * 65.481 + img.planes[1] * 128.553 + img.planes[2] * 24.966 + 16.0) / 255.0;
    } else if (tex.is_object()) {
      reject_unknown(tex, {"noise", "size", "smoothness"}, w + " texture");
      t.values = noise_texture(json_get<std::uint64_t>(tex, "noise", w),
                               tex.value("size", std::size_t(256)),
                               tex.value("smoothness", std::size_t(16)));
    } else {
      throw ConfigError(w + ": texture must be a PNG path or a noise object");
    }
    if (l.contains("extent")) {
      const auto e = json_get<std::vector<double>>(l, "extent", w);
      if (e.size() != 2) throw ConfigError(w + ": extent must be [width, height]");
      t.width = e[0];
      t.height = e[1];
    }
    if (l.contains("center")) {
      const auto c = json_get<std::vector<double>>(l, "center", w);
      if (c.size() != 2) throw ConfigError(w + ": center must be [x, y]");
      t.center_x = c[0];
      t.center_y = c[1];
    }
    if (l.contains("out_of_bounds")) t.out_of_bounds = json_get<double>(l, "out_of_bounds", w);
    if (l.contains("opacity")) {
      const auto m = read_png(base_dir / json_get<std::string>(l, "opacity", w));
      if (m.planes[0].rows() != t.values.rows() || m.planes[0].cols() != t.values.cols())
        throw ShapeError(w + ": opacity mask size differs from texture");
      t.mask = (m.planes[0] > 0.0).cast<unsigned char>();
    }
    s.layers.push_back(std::move(layer));
  }
  return s;
}

}  // namespace lfx::pipeline
