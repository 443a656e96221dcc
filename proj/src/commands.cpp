#include "lfx/cli.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "lfx/autodiff/gradcheck.hpp"
#include "lfx/error.hpp"
#include "lfx/model/network.hpp"
#include "lfx/model/xmask.hpp"
#include "lfx/pipeline/dataset.hpp"
#include "lfx/pipeline/io.hpp"
#include "lfx/pipeline/metrics.hpp"
#include "lfx/pipeline/train.hpp"

namespace lfx::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError("--set: empty key segment in '" + key + "'");
    if (node->is_null()) *node = json::object();
    if (!node->is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::vector<std::string> sets;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool need_out) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--set", c.sets, "override a config key (dotted.key=value)")->take_all();
  auto* o = cmd->add_option("--out", c.out, "output path");
  if (need_out) o->required();
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("no such file or directory: " + p.string());
}

void prepare_output(const fs::path& p) {
  const auto parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec || !fs::is_directory(parent)) throw IoError("cannot create directory " + parent.string());
}

// --config document with --set applied; unknown top-level keys rejected.
json load_config(const Common& c, std::initializer_list<const char*> known) {
  json doc = json::object();
  if (!c.config.empty()) {
    require_file(c.config);
    doc = pipeline::read_json(c.config);
    if (!doc.is_object()) throw ConfigError(c.config + ": top level must be an object");
  }
  for (const auto& s : c.sets) apply_override(doc, s);
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    bool ok = false;
    for (auto k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("config: unknown key '" + it.key() + "'");
  }
  return doc;
}

fs::path config_dir(const Common& c) {
  return c.config.empty() ? fs::current_path() : fs::absolute(c.config).parent_path();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

pipeline::SyntheticSceneOptions synthetic_options(const json& j) {
  pipeline::SyntheticSceneOptions o;
  if (j.is_null()) return o;
  if (!j.is_object()) throw ConfigError("synthetic: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k != "min_depth" && k != "max_depth" && k != "cards" && k != "feature_px")
      throw ConfigError("synthetic: unknown key '" + k + "'");
  }
  o.min_depth = get_or(j, "min_depth", o.min_depth);
  o.max_depth = get_or(j, "max_depth", o.max_depth);
  o.cards = get_or(j, "cards", o.cards);
  o.feature_px = get_or(j, "feature_px", o.feature_px);
  return o;
}

// ---------------------------------------------------------------- commands

void cmd_render(const Common& c, const std::string& scene_path, std::ostream& out) {
  auto doc = load_config(c, {"scene", "optics", "synthetic"});
  if (!scene_path.empty()) {
    require_file(scene_path);
    doc["scene"] = pipeline::read_json(scene_path);
  }
  prepare_output(c.out);
  const auto optics = pipeline::optics_from_json(doc.value("optics", json::object()));
  const auto scene =
      doc.contains("scene")
          ? pipeline::scene_from_json(doc["scene"], scene_path.empty()
                                                        ? config_dir(c)
                                                        : fs::absolute(scene_path).parent_path())
          : pipeline::synthetic_scene(c.seed, optics, synthetic_options(doc.value("synthetic", json())));
  const auto lf = optics::render_lf(scene, optics);
  pipeline::save_light_field(c.out, lf);
  out << "wrote " << c.out << " " << to_string(lf.dims()) << "\n";
}

void cmd_make_dataset(const Common& c, std::ostream& out) {
  const auto doc = load_config(c, {"optics", "count", "synthetic", "format"});
  const auto optics = pipeline::optics_from_json(doc.value("optics", json::object()));
  const auto count = get_or<std::size_t>(doc, "count", 8);
  const auto format = get_or<std::string>(doc, "format", "lf4d");
  if (count == 0) throw ConfigError("make-dataset: count must be >= 1");
  if (format != "lf4d" && format != "png")
    throw ConfigError("make-dataset: format must be \"lf4d\" or \"png\"");
  const auto opt = synthetic_options(doc.value("synthetic", json()));
  const fs::path dir = c.out;
  prepare_output(dir / "manifest.json");
  pipeline::DatasetManifest manifest;
  for (std::size_t i = 0; i < count; ++i) {
    std::ostringstream name;
    name << "scene_" << std::setw(3) << std::setfill('0') << i << (format == "lf4d" ? ".lf4d" : "");
    const auto lf = optics::render_lf(pipeline::synthetic_scene(c.seed + i, optics, opt), optics);
    pipeline::save_light_field(dir / name.str(), lf);
    manifest.scenes.push_back(name.str());
  }
  pipeline::save_manifest(dir / "manifest.json", manifest);
  out << "wrote " << count << " scenes to " << dir << "\n";
}

std::vector<LightField4D<double>> load_scenes(const fs::path& manifest_path) {
  require_file(manifest_path);
  const auto m = pipeline::load_manifest(manifest_path);
  std::vector<LightField4D<double>> lfs;
  for (const auto& p : m.scenes) {
    require_file(p);
    lfs.push_back(pipeline::load_light_field(p));
  }
  return lfs;
}

// Dense ground truth with the angular size the network produces.
void check_angular(const LightField4D<double>& lf, const model::NetworkConfig& cfg) {
  const auto A = cfg.output_angular();
  if (lf.dims().u != A || lf.dims().v != A || lf.dims().c != cfg.in_channels)
    throw ShapeError("scene " + to_string(lf.dims()) + " does not match model (C=" +
                     std::to_string(cfg.in_channels) + ", A=" + std::to_string(A) + ")");
}

pipeline::LfPair make_pair(const LightField4D<double>& hr, const model::NetworkConfig& cfg) {
  if (cfg.task == model::Task::SSR) return pipeline::make_ssr_pair(hr, cfg.scale);
  return pipeline::make_asr_pair(hr, cfg.asr_in, cfg.asr_out);
}

void cmd_train(const Common& c, std::ostream& out) {
  const auto doc = load_config(c, {"model", "train", "data"});
  const auto mcfg = model::network_config_from_json(doc.value("model", json::object()));
  auto tj = doc.value("train", json::object());
  if (!c.out.empty()) tj["out_dir"] = c.out;
  tj["seed"] = c.seed;
  const auto tcfg = pipeline::train_config_from_json(tj);
  const auto data = doc.value("data", json::object());
  if (!data.is_object() || !data.contains("train")) throw ConfigError("train: data.train is required");
  for (auto it = data.begin(); it != data.end(); ++it)
    if (it.key() != "train" && it.key() != "val" && it.key() != "stride")
      throw ConfigError("data: unknown key '" + it.key() + "'");
  const auto base = config_dir(c);
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  const auto stride = get_or<std::size_t>(data, "stride", tcfg.patch);
  if (stride == 0) throw ConfigError("data: stride must be >= 1");

  std::vector<pipeline::LfPair> train_set, val_set;
  for (const auto& lf : load_scenes(resolve(get_or<std::string>(data, "train", "")))) {
    check_angular(lf, mcfg);
    for (const auto& p : pipeline::crop_patches(lf, tcfg.patch, stride))
      train_set.push_back(make_pair(p, mcfg));
  }
  if (data.contains("val"))
    for (const auto& lf : load_scenes(resolve(get_or<std::string>(data, "val", "")))) {
      check_angular(lf, mcfg);
      val_set.push_back(make_pair(lf, mcfg));
    }

  model::Network<float> net(mcfg, c.seed);
  out << "training on " << train_set.size() << " patches\n";
  const auto res = pipeline::train(net, train_set, val_set, tcfg, [&](const pipeline::StepLog& s) {
    if (s.step % 50 == 0) out << "step " << s.step << " epoch " << s.epoch << " loss " << s.loss << "\n";
  });
  if (!c.out.empty()) {
    pipeline::save_network(fs::path(c.out) / "model.lfck", net);
    json resolved = {{"model", model::to_json(mcfg)}, {"train", pipeline::to_json(tcfg)}, {"data", data}};
    pipeline::write_text(fs::path(c.out) / "config.json", resolved.dump(2) + "\n");
  }
  out << "finished " << res.steps.size() << " steps, final loss "
      << (res.steps.empty() ? 0.0 : res.steps.back().loss) << "\n";
}

pipeline::LfModel as_model(const model::Network<float>& net) {
  return [&net](const LightField4D<double>& in) { return net.infer(in.cast<float>()).cast<double>(); };
}

pipeline::EvalOptions eval_options(const json& doc, const model::NetworkConfig& cfg) {
  const auto e = doc.value("eval", json::object());
  for (auto it = e.begin(); it != e.end(); ++it)
    if (it.key() != "tile" && it.key() != "pad") throw ConfigError("eval: unknown key '" + it.key() + "'");
  pipeline::EvalOptions o;
  o.scale = cfg.task == model::Task::SSR ? cfg.scale : 1;
  o.tile = get_or<std::size_t>(e, "tile", 0);
  o.pad = get_or<std::size_t>(e, "pad", 0);
  o.excluded = pipeline::input_views(cfg);
  return o;
}

void cmd_eval(const Common& c, const std::string& ckpt, const std::string& manifest, std::ostream& out) {
  const auto doc = load_config(c, {"eval"});
  require_file(ckpt);
  require_file(manifest);
  prepare_output(c.out);
  const auto net = pipeline::load_network(ckpt);
  const auto opt = eval_options(doc, net.config());
  const auto m = pipeline::load_manifest(manifest);
  const auto lfs = load_scenes(manifest);
  std::vector<pipeline::EvalPair> data;
  for (std::size_t i = 0; i < lfs.size(); ++i) {
    check_angular(lfs[i], net.config());
    const auto pair = make_pair(lfs[i], net.config());
    data.push_back({m.scenes[i].stem().string(), pair.input, pair.target});
  }
  const auto report = pipeline::evaluate(as_model(net), data, opt);
  pipeline::write_text(c.out, report.to_csv());
  out << std::fixed << std::setprecision(4) << "PSNR " << report.psnr << " SSIM " << report.ssim
      << " over " << report.scenes.size() << " scenes\n";
}

void cmd_sr(const Common& c, const std::string& ckpt, const std::string& input, std::size_t tile,
            std::size_t pad, std::ostream& out) {
  load_config(c, {});
  require_file(ckpt);
  require_file(input);
  prepare_output(c.out);
  const auto net = pipeline::load_network(ckpt);
  const auto lf = pipeline::load_light_field(input);
  const std::size_t scale = net.config().task == model::Task::SSR ? net.config().scale : 1;
  const auto res = pipeline::run_tiled(as_model(net), lf, scale, tile, pad);
  pipeline::save_light_field(c.out, res);
  out << "wrote " << c.out << " " << to_string(res.dims()) << "\n";
}

void cmd_inspect(const Common& c, const std::string& input, std::size_t channel,
                 std::vector<long> at, std::ostream& out) {
  load_config(c, {});
  require_file(input);
  const fs::path dir = c.out;
  prepare_output(dir / "sai_grid.png");
  const auto lf = pipeline::load_light_field(input);
  const auto& d = lf.dims();
  if (channel >= d.c) throw ShapeError("inspect: channel " + std::to_string(channel) + " out of range");
  // slice coordinates; negative means the center
  const std::size_t sizes[4] = {d.u, d.v, d.y, d.x};
  std::size_t u, v, y, x;
  std::size_t* dst[4] = {&u, &v, &y, &x};
  for (int i = 0; i < 4; ++i) {
    if (at[i] >= long(sizes[i])) throw ShapeError("inspect: slice coordinate out of range");
    *dst[i] = at[i] < 0 ? sizes[i] / 2 : std::size_t(at[i]);
  }

  Image<double> grid(Eigen::Index(d.u * d.y), Eigen::Index(d.v * d.x));
  for (std::size_t a = 0; a < d.u; ++a)
    for (std::size_t b = 0; b < d.v; ++b)
      grid.block(Eigen::Index(a * d.y), Eigen::Index(b * d.x), Eigen::Index(d.y), Eigen::Index(d.x)) =
          lf.view(channel, a, b);
  pipeline::write_png(dir / "sai_grid.png", grid, 8);
  pipeline::write_png(dir / "macpi.png", to_macpi_image(lf, channel), 8);

  auto panel = [&](SubspaceId id, std::size_t batch) {
    const auto pb = subspace_view(lf, id);
    pipeline::write_png(dir / (std::string(name(id)) + ".png"), Image<double>(pb.plane(channel, batch)), 8);
  };
  panel(SubspaceId::EpiUX, v * d.y + y);
  panel(SubspaceId::EpiVY, u * d.x + x);
  panel(SubspaceId::VsiVX, u * d.y + y);
  panel(SubspaceId::VsiUY, v * d.x + x);
  out << "wrote panels for " << to_string(d) << " at u=" << u << " v=" << v << " y=" << y << " x=" << x
      << " to " << dir << "\n";
}

void cmd_gradcheck(const Common& c, double tol, std::size_t entries, std::ostream& out,
                   int& status) {
  const auto doc = load_config(c, {"model"});
  json mj = {{"channels", 8}, {"n_c42", 1}, {"n_epix", 1}, {"heads", 2}, {"angular", 2}, {"d_max", 1.0}};
  for (auto& [k, v] : doc.value("model", json::object()).items()) mj[k] = v;
  const auto cfg = model::network_config_from_json(mj);
  model::Network<double> net(cfg, c.seed);
  // projections start at zero; randomize so every path carries gradient
  std::mt19937_64 rng(c.seed + 1);
  std::normal_distribution<double> nd(0.0, 0.25);
  for (auto& t : net.params().tensors())
    for (Eigen::Index i = 0; i < t.value().size(); ++i) t.value()[i] = nd(rng);
  const std::size_t A = cfg.input_angular(), S = 6;
  ad::Buffer<double> xv(Eigen::Index(cfg.in_channels * A * A * S * S));
  for (Eigen::Index i = 0; i < xv.size(); ++i) xv[i] = nd(rng) * 4;
  auto x = ad::Tensor<double>::parameter({1, cfg.in_channels, A, A, S, S}, xv);
  auto wrt = net.params().tensors();
  wrt.push_back(x);
  const auto out_shape = net.forward(x).shape();
  ad::Buffer<double> w(Eigen::Index(ad::numel(out_shape)));
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = nd(rng) * 4;
  const auto weights = ad::Tensor<double>::constant(out_shape, w);
  const auto res = ad::grad_check([&] { return ad::sum(ad::mul(net.forward(x), weights)); }, wrt,
                                  {1e-6, entries, 1e-3, c.seed});
  out << std::scientific << std::setprecision(3) << "max relative error " << res.max_rel_error
      << " over " << wrt.size() << " tensors (tolerance " << tol << ")";
  if (!res.worst.empty()) out << "; worst: " << res.worst;
  out << "\n";
  status = res.max_rel_error < tol ? kExitOk : kExitFailed;
}

void cmd_maskdump(const Common& c, std::size_t S, std::size_t L, const std::string& d_text,
                  std::ostream& out) {
  load_config(c, {});
  double d_max = 0.0;
  if (d_text == "inf") {
    d_max = model::kUnbounded;
  } else {
    try {
      std::size_t used = 0;
      d_max = std::stod(d_text, &used);
      if (used != d_text.size()) throw std::invalid_argument(d_text);
    } catch (const std::exception&) {
      throw ConfigError("maskdump: d_max must be a number or inf, got '" + d_text + "'");
    }
  }
  const auto mask = model::build_xmask(S, L, d_max);
  const fs::path stem = c.out;
  prepare_output(stem);
  Image<double> img(mask.rows(), mask.cols());
  std::ostringstream csv;
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index k = 0; k < mask.cols(); ++k) {
      const bool admitted = mask(r, k) == 0.0;
      img(r, k) = admitted ? 1.0 : 0.0;
      csv << (k ? "," : "") << (admitted ? 1 : 0);
    }
    csv << "\n";
  }
  pipeline::write_png(fs::path(stem.string() + ".png"), img, 8);
  pipeline::write_text(fs::path(stem.string() + ".csv"), csv.str());
  out << "mask " << S * L << "x" << S * L << ", " << model::admitted_count(mask) << " admitted\n";
}

int fail(std::ostream& err, int code, const char* kind, const std::string& what) {
  std::string line = what;
  for (auto& ch : line)
    if (ch == '\n' || ch == '\r') ch = ' ';
  err << "error: " << kind << ": " << line << "\n";
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"lfx: light field super-resolution toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common common;
  std::string scene, ckpt, manifest, input;
  std::size_t tile = 0, pad = 0, channel = 0, entries = 8, S = 0, L = 0;
  std::vector<long> at = {-1, -1, -1, -1};
  double tol = 1e-4;
  std::string d_text;

  auto* render = app.add_subcommand("render", "render a layered scene to a light field");
  add_common(render, common, true);
  render->add_option("scene", scene, "scene JSON (omit for a synthetic scene from --seed)");

  auto* make = app.add_subcommand("make-dataset", "render synthetic scenes and a manifest");
  add_common(make, common, true);

  auto* train = app.add_subcommand("train", "train a network");
  add_common(train, common, false);

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset manifest");
  add_common(eval, common, true);
  eval->add_option("checkpoint", ckpt)->required();
  eval->add_option("manifest", manifest)->required();

  auto* sr = app.add_subcommand("sr", "run a checkpoint on one light field");
  add_common(sr, common, true);
  sr->add_option("checkpoint", ckpt)->required();
  sr->add_option("input", input)->required();
  sr->add_option("--tile", tile, "spatial tile size (0 = whole image)");
  sr->add_option("--pad", pad, "tile overlap in input pixels");

  auto* inspect = app.add_subcommand("inspect", "write SAI, MacPI, EPI and VSI panels");
  add_common(inspect, common, true);
  inspect->add_option("input", input)->required();
  inspect->add_option("--channel", channel);
  inspect->add_option("--u", at[0], "slice coordinates; default center");
  inspect->add_option("--v", at[1]);
  inspect->add_option("--y", at[2]);
  inspect->add_option("--x", at[3]);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of a small network");
  add_common(grad, common, false);
  grad->add_option("--tol", tol);
  grad->add_option("--entries", entries, "probed entries per tensor");

  auto* mask = app.add_subcommand("maskdump", "write the X-mask as PNG and CSV");
  add_common(mask, common, true);
  mask->add_option("S", S, "angular size")->required();
  mask->add_option("L", L, "spatial size")->required();
  mask->add_option("d_max", d_text, "maximum disparity, or inf")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, kExitConfig, "usage", e.what());
  }

  int status = kExitOk;
  try {
    if (render->parsed()) cmd_render(common, scene, out);
    else if (make->parsed()) cmd_make_dataset(common, out);
    else if (train->parsed()) cmd_train(common, out);
    else if (eval->parsed()) cmd_eval(common, ckpt, manifest, out);
    else if (sr->parsed()) cmd_sr(common, ckpt, input, tile, pad, out);
    else if (inspect->parsed()) cmd_inspect(common, input, channel, at, out);
    else if (grad->parsed()) cmd_gradcheck(common, tol, entries, out, status);
    else if (mask->parsed()) cmd_maskdump(common, S, L, d_text, out);
  } catch (const ConfigError& e) {
    return fail(err, kExitConfig, "config", e.what());
  } catch (const json::exception& e) {
    return fail(err, kExitConfig, "config", e.what());
  } catch (const IoError& e) {
    return fail(err, kExitIo, "io", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(err, kExitIo, "io", e.what());
  } catch (const ShapeError& e) {
    return fail(err, kExitShape, "shape", e.what());
  } catch (const NumericError& e) {
    return fail(err, kExitShape, "numeric", e.what());
  }
  return status;
}

}  // namespace lfx::cli
