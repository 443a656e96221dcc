#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "lfx/cli.hpp"
#include "lfx/pipeline/io.hpp"
#include "lfx/pipeline/train.hpp"
#include "oracles.hpp"

using namespace lfx;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run lfx_cmd(std::vector<std::string> args) {
  args.insert(args.begin(), "lfx");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& tag) {
  const auto p = fs::temp_directory_path() / ("lfx_cli_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const nlohmann::json& j) { pipeline::write_text(p, j.dump(2)); }

}  // namespace

TEST_CASE("--set writes dotted keys") {
  nlohmann::json doc = {{"train", {{"lr", 1}}}};
  cli::apply_override(doc, "train.lr=0.001");
  cli::apply_override(doc, "model.task=ssr");
  cli::apply_override(doc, "model.use_vsi=false");
  CHECK(doc["train"]["lr"] == 0.001);
  CHECK(doc["model"]["task"] == "ssr");
  CHECK(doc["model"]["use_vsi"] == false);
  CHECK_THROWS_AS(cli::apply_override(doc, "novalue"), ConfigError);
  CHECK_THROWS_AS(cli::apply_override(doc, "train.lr.x=1"), ConfigError);
}

TEST_CASE("maskdump CSV is the enumerated X-mask") {
  const auto dir = scratch_dir("mask");
  const auto r = lfx_cmd({"maskdump", "3", "3", "1", "--out", (dir / "m").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "m.png"));
  std::ifstream is(dir / "m.csv");
  std::string line;
  for (long q = 0; q < 9; ++q) {
    REQUIRE(std::getline(is, line));
    std::string expect;
    for (long k = 0; k < 9; ++k)
      expect += std::string(k ? "," : "") + (testing::brute_admits(q / 3, q % 3, k / 3, k % 3, 1.0) ? "1" : "0");
    CHECK(line == expect);
  }
  CHECK(lfx_cmd({"maskdump", "3", "3", "inf", "--out", (dir / "n").string()}).code == 0);
  CHECK(lfx_cmd({"maskdump", "3", "3", "wide", "--out", (dir / "n").string()}).code == cli::kExitConfig);
  fs::remove_all(dir);
}

TEST_CASE("inspect: EPI panel of a plane at z0 has slope 2") {
  const auto dir = scratch_dir("epi");
  const auto o = testing::epi_optics();
  const auto lf = optics::render_lf(testing::single_plane(o.z0, testing::stripe_texture(5, 400.0)), o);
  pipeline::save_lf4d(dir / "plane.lf4d", lf);
  const auto r = lfx_cmd({"inspect", (dir / "plane.lf4d").string(), "--out", (dir / "panels").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (auto n : {"sai_grid", "macpi", "epi_ux", "epi_vy", "vsi_vx", "vsi_uy"})
    CHECK(fs::exists(dir / "panels" / (std::string(n) + ".png")));
  const auto epi = pipeline::read_png(dir / "panels" / "epi_ux.png").planes.at(0);
  CHECK(epi.rows() == Eigen::Index(o.U));
  CHECK(epi.cols() == Eigen::Index(o.X));
  const double slope = optics::fit_epi_slope(epi) * o.baseline / o.pixel_pitch;
  CHECK(std::abs(slope - 2.0) < 0.04);
  CHECK(lfx_cmd({"inspect", (dir / "plane.lf4d").string(), "--u", "40", "--out", (dir / "p2").string()}).code ==
        cli::kExitShape);
  fs::remove_all(dir);
}

TEST_CASE("render then inspect then reassemble the SAI grid within 1/255") {
  const auto dir = scratch_dir("render");
  write(dir / "scene.json",
        {{"background", 0.3},
         {"layers", {{{"depth", 0.2}, {"texture", {{"noise", 4}, {"size", 64}, {"smoothness", 6}}},
                      {"extent", {3.0, 3.0}}}}}});
  write(dir / "cfg.json", {{"optics", {{"U", 3}, {"V", 4}, {"Y", 10}, {"X", 12}, {"baseline", 0.5}}}});
  const auto r = lfx_cmd({"render", (dir / "scene.json").string(), "--config", (dir / "cfg.json").string(),
                          "--set", "optics.Y=11", "--out", (dir / "lf.lf4d").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto lf = pipeline::load_lf4d(dir / "lf.lf4d");
  REQUIRE(lf.dims() == LfDims{1, 3, 4, 11, 12});
  REQUIRE(lfx_cmd({"inspect", (dir / "lf.lf4d").string(), "--out", (dir / "p").string()}).code == 0);

  const auto grid = pipeline::read_png(dir / "p" / "sai_grid.png").planes.at(0);
  REQUIRE(grid.rows() == 33);
  REQUIRE(grid.cols() == 48);
  fs::create_directories(dir / "views");
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t v = 0; v < 4; ++v)
      pipeline::write_png(dir / "views" / ("view_u" + std::to_string(u) + "_v" + std::to_string(v) + ".png"),
                          Image<double>(grid.block(Eigen::Index(u * 11), Eigen::Index(v * 12), 11, 12)), 8);
  write(dir / "views" / "meta.json", {{"U", 3}, {"V", 4}, {"channels", 1}, {"bit_depth", 8}});
  const auto back = pipeline::load_png_grid(dir / "views");
  REQUIRE(back.dims() == lf.dims());
  CHECK((back.data() - lf.data()).abs().maxCoeff() <= 1.0 / 255);

  // same seed, same synthetic scene
  const auto a = lfx_cmd({"render", "--config", (dir / "cfg.json").string(), "--seed", "9", "--out",
                          (dir / "s1.lf4d").string()});
  const auto b = lfx_cmd({"render", "--config", (dir / "cfg.json").string(), "--seed", "9", "--out",
                          (dir / "s2.lf4d").string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK((pipeline::load_lf4d(dir / "s1.lf4d").data() == pipeline::load_lf4d(dir / "s2.lf4d").data()).all());
  fs::remove_all(dir);
}

TEST_CASE("sr: 5x5x16x16 through an SSR x2 checkpoint gives 5x5x32x32") {
  const auto dir = scratch_dir("sr");
  model::NetworkConfig c;
  c.channels = 8;
  c.n_c42 = c.n_epix = 1;
  c.heads = 2;
  c.angular = 5;
  pipeline::save_network(dir / "m.lfck", model::Network<float>(c, 3));
  LightField4D<double> lf({1, 5, 5, 16, 16});
  lf.data().setConstant(0.4);
  pipeline::save_lf4d(dir / "in.lf4d", lf);
  auto r = lfx_cmd({"sr", (dir / "m.lfck").string(), (dir / "in.lf4d").string(), "--out", (dir / "o.lf4d").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(pipeline::load_lf4d(dir / "o.lf4d").dims() == LfDims{1, 5, 5, 32, 32});
  r = lfx_cmd({"sr", (dir / "m.lfck").string(), (dir / "in.lf4d").string(), "--tile", "8", "--pad", "2", "--out",
               (dir / "t.lf4d").string()});
  REQUIRE(r.code == 0);
  CHECK(pipeline::load_lf4d(dir / "t.lf4d").dims() == LfDims{1, 5, 5, 32, 32});

  LightField4D<double> wrong({1, 3, 3, 16, 16});
  pipeline::save_lf4d(dir / "wrong.lf4d", wrong);
  r = lfx_cmd({"sr", (dir / "m.lfck").string(), (dir / "wrong.lf4d").string(), "--out", (dir / "x.lf4d").string()});
  CHECK(r.code == cli::kExitShape);
  CHECK(r.err.rfind("error: shape: ", 0) == 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  const auto dir = scratch_dir("codes");
  CHECK(lfx_cmd({"--help"}).code == 0);
  CHECK(lfx_cmd({}).code == cli::kExitConfig);
  CHECK(lfx_cmd({"fly"}).code == cli::kExitConfig);
  CHECK(lfx_cmd({"maskdump", "3", "3"}).code == cli::kExitConfig);
  const auto missing = lfx_cmd({"inspect", (dir / "nope.lf4d").string(), "--out", (dir / "p").string()});
  CHECK(missing.code == cli::kExitIo);
  CHECK(missing.err.rfind("error: io: ", 0) == 0);
  write(dir / "bad.json", {{"optics", {{"U", 3}}}, {"colour", 2}});
  CHECK(lfx_cmd({"render", "--config", (dir / "bad.json").string(), "--out", (dir / "x.lf4d").string()}).code ==
        cli::kExitConfig);
  CHECK(lfx_cmd({"render", "--set", "optics.z0=-1", "--out", (dir / "x.lf4d").string()}).code == cli::kExitConfig);
  std::ofstream(dir / "garbage.json") << "{ not json";
  CHECK(lfx_cmd({"train", "--config", (dir / "garbage.json").string()}).code == cli::kExitConfig);
  fs::remove_all(dir);
}

TEST_CASE("make-dataset, train, eval end to end") {
  const auto dir = scratch_dir("e2e");
  write(dir / "data.json", {{"optics", {{"U", 2}, {"V", 2}, {"Y", 16}, {"X", 16}, {"baseline", 0.5}}}, {"count", 2}});
  auto r = lfx_cmd({"make-dataset", "--config", (dir / "data.json").string(), "--out", (dir / "set").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(pipeline::load_manifest(dir / "set" / "manifest.json").scenes.size() == 2);

  write(dir / "train.json",
        {{"model", {{"channels", 8}, {"n_c42", 1}, {"n_epix", 1}, {"heads", 2}, {"angular", 2}}},
         {"train", {{"patch", 8}, {"batch_size", 4}, {"epochs", 1}, {"lr", 1e-3}}},
         {"data", {{"train", "set/manifest.json"}, {"val", "set/manifest.json"}}}});
  r = lfx_cmd({"train", "--config", (dir / "train.json").string(), "--out", (dir / "run").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(dir / "run" / "model.lfck"));
  CHECK(fs::exists(dir / "run" / "loss.csv"));
  CHECK(fs::exists(dir / "run" / "config.json"));

  r = lfx_cmd({"eval", (dir / "run" / "model.lfck").string(), (dir / "set" / "manifest.json").string(), "--set",
               "eval.tile=4", "--set", "eval.pad=2", "--out", (dir / "report.csv").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::ifstream is(dir / "report.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "level,scene,u,v,psnr,ssim");
  fs::remove_all(dir);
}

TEST_CASE("gradcheck command passes on the default toy network") {
  const auto r = lfx_cmd({"gradcheck", "--seed", "2"});
  CHECK_MESSAGE(r.code == 0, r.out << r.err);
}
