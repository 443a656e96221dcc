#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "lfx/autodiff/checkpoint.hpp"
#include "lfx/pipeline/dataset.hpp"
#include "lfx/pipeline/io.hpp"
#include "lfx/pipeline/metrics.hpp"
#include "lfx/pipeline/resize.hpp"
#include "lfx/pipeline/train.hpp"

using namespace lfx;
using namespace lfx::pipeline;
namespace fs = std::filesystem;

namespace {

Image<double> random_image(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Image<double> img(r, c);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = d(rng);
  return img;
}

LightField4D<double> random_lf(const LfDims& d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LightField4D<double> lf(d);
  for (Eigen::Index i = 0; i < lf.data().size(); ++i) lf.data()[i] = u(rng);
  return lf;
}

// Resampling matrix written straight from the kernel: out o reads input
// coordinate (o+0.5)/s - 0.5, kernel widened by 1/s on downscale, indices
// mirrored about the half-sample border, rows normalized.
Eigen::MatrixXd dense_resampler(int in, int out) {
  auto keys = [](double t) {
    t = std::abs(t);
    if (t <= 1) return 1.5 * t * t * t - 2.5 * t * t + 1;
    if (t < 2) return -0.5 * t * t * t + 2.5 * t * t - 4 * t + 2;
    return 0.0;
  };
  const double s = double(out) / in, k = std::min(1.0, s);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(out, in);
  for (int o = 0; o < out; ++o) {
    const double x = (o + 0.5) / s - 0.5;
    for (int i = -4 * in; i < 5 * in; ++i) {
      const double w = k * keys(k * (x - i));
      if (w == 0) continue;
      int j = i;
      while (j < 0 || j >= in) j = j < 0 ? -1 - j : 2 * in - 1 - j;
      m(o, j) += w;
    }
    m.row(o) /= m.row(o).sum();
  }
  return m;
}

// SSIM by its definition: Gaussian-weighted statistics at every window
// position that fits, averaged.
double direct_ssim(const Image<double>& a, const Image<double>& b) {
  int n = int(std::min<Eigen::Index>({11, a.rows(), a.cols()}));
  if (n % 2 == 0) --n;
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double di = i - (n - 1) / 2.0, dj = j - (n - 1) / 2.0;
      g(i, j) = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
    }
  g /= g.sum();
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int count = 0;
  for (Eigen::Index r = 0; r + n <= a.rows(); ++r)
    for (Eigen::Index c = 0; c + n <= a.cols(); ++c) {
      double ma = 0, mb = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          ma += g(i, j) * a(r + i, c + j);
          mb += g(i, j) * b(r + i, c + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double ea = a(r + i, c + j) - ma, eb = b(r + i, c + j) - mb;
          va += g(i, j) * ea * ea;
          vb += g(i, j) * eb * eb;
          cov += g(i, j) * ea * eb;
        }
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

fs::path scratch_dir(const std::string& tag) {
  const auto p = fs::temp_directory_path() / ("lfx_test_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

optics::OpticsConfig small_optics(std::size_t A, std::size_t S) {
  optics::OpticsConfig o;
  o.U = o.V = A;
  o.Y = o.X = S;
  o.baseline = 0.8;
  return o;
}

}  // namespace

TEST_CASE("bicubic: reference tap weights") {
  // x2: every interior output sees taps at distances 0.25, 0.75, 1.25, 1.75
  const auto up = resample_weights(16, 32);
  const double ref_up[4] = {-0.0703125, 0.8671875, 0.2265625, -0.0234375};
  const auto& row = up[9];  // samples input 4.25 -> taps 3, 4, 5, 6
  std::vector<double> w(4, 0.0);
  for (const auto& t : row.taps) w[t.index - 3] += t.weight;
  for (int i = 0; i < 4; ++i) CHECK(w[i] == ref_up[i]);

  // x1/2: eight taps of the widened kernel
  const auto down = resample_weights(16, 8);
  const double ref_down[8] = {-0.01171875, -0.03515625, 0.11328125, 0.43359375,
                              0.43359375,  0.11328125,  -0.03515625, -0.01171875};
  std::vector<double> wd(8, 0.0);
  for (const auto& t : down[3].taps) wd[t.index - 3] += t.weight;  // center 6.5
  for (int i = 0; i < 8; ++i) CHECK(wd[i] == doctest::Approx(ref_down[i]).epsilon(1e-15));
}

TEST_CASE("bicubic: matches the dense-matrix oracle") {
  Image<double> ramp(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) ramp(r, c) = 0.1 * r + 0.03 * c * c;
  for (auto [img, factor] : {std::pair{ramp, 0.5}, std::pair{random_image(9, 7, 1), 2.0},
                             std::pair{random_image(12, 16, 2), 0.25}, std::pair{random_image(5, 6, 3), 4.0}}) {
    const auto out = bicubic_resize(img, factor);
    const int R = int(std::lround(img.rows() * factor)), C = int(std::lround(img.cols() * factor));
    REQUIRE(out.rows() == R);
    REQUIRE(out.cols() == C);
    const Eigen::MatrixXd ref =
        dense_resampler(int(img.rows()), R) * img.matrix() * dense_resampler(int(img.cols()), C).transpose();
    CHECK((out.matrix() - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("bicubic: constants stay exact, bad sizes throw") {
  const Image<double> flat = Image<double>::Constant(8, 12, 0.375);
  for (double f : {0.25, 0.5, 2.0, 4.0}) {
    const auto out = bicubic_resize(flat, f);
    CHECK((out == 0.375).all());
  }
  CHECK(bicubic_resize(flat, 2.0).rows() == 16);
  const auto odd = bicubic_resize(Image<double>(Image<double>::Constant(7, 9, 0.375)), 0.5);
  CHECK((odd - 0.375).abs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(bicubic_resize(flat, 0.0), ShapeError);
  CHECK_THROWS_AS(bicubic_resize(flat, 0.01), ShapeError);
  CHECK_THROWS_AS(resample_weights(0, 3), ShapeError);
}

TEST_CASE("ssr pairs and patches") {
  const auto hr = random_lf({1, 5, 5, 64, 64}, 4);
  const auto p = make_ssr_pair(hr, 2);
  CHECK(p.input.dims() == LfDims{1, 5, 5, 32, 32});
  CHECK((p.target.data() == hr.data()).all());
  const Image<double> v = p.input.view(0, 1, 3);
  CHECK((v == bicubic_resize(Image<double>(hr.view(0, 1, 3)), 0.5)).all());

  const auto big = random_lf({1, 2, 2, 128, 128}, 5);
  CHECK(make_ssr_pair(big, 4).input.dims() == LfDims{1, 2, 2, 32, 32});
  CHECK_THROWS_AS(make_ssr_pair(random_lf({1, 2, 2, 30, 30}, 6), 4), ShapeError);

  const auto patches = crop_patches(hr, 32, 32);
  REQUIRE(patches.size() == 4);
  CHECK(patches[1].dims() == LfDims{1, 5, 5, 32, 32});
  CHECK(patches[1](0, 2, 3, 4, 5) == hr(0, 2, 3, 4, 37));
  CHECK(patches[2](0, 2, 3, 4, 5) == hr(0, 2, 3, 36, 5));
  CHECK(crop_patches(hr, 32, 16).size() == 9);
}

TEST_CASE("asr pairs take the four corners of the 7x7 grid") {
  CHECK(sparse_angles(2, 7) == std::vector<std::size_t>{0, 6});
  const auto dense = random_lf({1, 7, 7, 6, 6}, 7);
  const auto p = make_asr_pair(dense);
  CHECK(p.input.dims() == LfDims{1, 2, 2, 6, 6});
  CHECK((p.target.data() == dense.data()).all());
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK((Image<double>(p.input.view(0, i, j)) == Image<double>(dense.view(0, 6 * i, 6 * j))).all());
  CHECK_THROWS(make_asr_pair(random_lf({1, 5, 5, 6, 6}, 8)));
}

TEST_CASE("rgb_to_y endpoints") {
  auto y_of = [](double r, double g, double b) {
    return rgb_to_y({Image<double>::Constant(1, 1, r), Image<double>::Constant(1, 1, g),
                     Image<double>::Constant(1, 1, b)})(0, 0);
  };
  CHECK(y_of(1, 1, 1) == doctest::Approx(235.0 / 255).epsilon(1e-14));
  CHECK(y_of(0, 0, 0) == doctest::Approx(16.0 / 255).epsilon(1e-14));
  CHECK(y_of(0.5, 0.5, 0.5) == doctest::Approx((0.5 * 219 + 16) / 255).epsilon(1e-14));
  CHECK(y_of(1, 0, 0) == doctest::Approx((65.481 + 16) / 255).epsilon(1e-14));
  CHECK_THROWS(rgb_to_y(std::vector<Image<double>>{Image<double>::Zero(2, 2)}));
}

TEST_CASE("augmentation: involutions and commuting with degradation") {
  const auto hr = random_lf({1, 4, 4, 16, 16}, 9);
  const auto twice = [&](AugmentOp op) { return augment(augment(hr, op), op); };
  CHECK((twice(AugmentOp::FlipH).data() == hr.data()).all());
  CHECK((twice(AugmentOp::FlipV).data() == hr.data()).all());
  auto r = hr;
  for (int i = 0; i < 4; ++i) r = augment(r, AugmentOp::Rot90);
  CHECK((r.data() == hr.data()).all());
  CHECK(!(augment(hr, AugmentOp::Rot90).data() == hr.data()).all());

  for (auto op : {AugmentOp::FlipH, AugmentOp::FlipV, AugmentOp::Rot90}) {
    const auto a = make_ssr_pair(augment(hr, op), 2);
    const auto b = augment(make_ssr_pair(hr, 2), op);
    CHECK((a.input.data() == b.input.data()).all());
    CHECK((a.target.data() == b.target.data()).all());
  }
}

TEST_CASE("psnr and ssim") {
  const auto a = random_image(16, 16, 10);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(ssim(a, a) == 1.0);
  Image<double> b = a + 0.1;
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(a, random_image(4, 4, 1)), ShapeError);

  const Image<double> half = 0.5 * a;
  CHECK(std::abs(ssim(a, half) - direct_ssim(a, half)) < 1e-9);
  const auto c = random_image(20, 13, 11), d = random_image(20, 13, 12);
  CHECK(std::abs(ssim(c, d) - direct_ssim(c, d)) < 1e-9);
  // smaller than the window
  const auto e = random_image(6, 8, 13), f = random_image(6, 8, 14);
  CHECK(std::abs(ssim(e, f) - direct_ssim(e, f)) < 1e-9);
}

TEST_CASE("aggregation is per view, then per scene, then per dataset") {
  MetricReport r;
  r.scenes.push_back({"a", {{0, 0, 30, 0.9}, {0, 1, 40, 0.7}}, 0, 0});
  r.scenes.push_back({"b", {{0, 0, 20, 0.5}}, 0, 0});
  aggregate(r);
  CHECK(r.scenes[0].psnr == 35.0);
  CHECK(r.psnr == 27.5);  // not (30 + 40 + 20) / 3
  CHECK(r.ssim == doctest::Approx(0.65).epsilon(1e-15));
  const auto csv = r.to_csv();
  CHECK(csv.find("dataset,,,,27.5,") != std::string::npos);

  r.excluded = {{0, 1}};
  aggregate(r);
  CHECK(r.scenes[0].psnr == 30.0);
  r.excluded = {{0, 0}};
  CHECK_THROWS_AS(aggregate(r), ShapeError);  // scene b has nothing left
}

TEST_CASE("tiled evaluation equals whole-image evaluation") {
  const auto lf = random_lf({1, 2, 3, 17, 13}, 15);
  const LfModel identity = [](const LightField4D<double>& in) { return in; };
  const LfModel upscale = [](const LightField4D<double>& in) { return resize_views(in, 2.0); };
  const auto whole = run_tiled(identity, lf, 1, 0, 0);
  CHECK((whole.data() == lf.data()).all());
  const auto tiled = run_tiled(identity, lf, 1, 5, 2);
  CHECK((tiled.data() == lf.data()).all());
  // bicubic reach is 2 input pixels; reflection padding reproduces the border rule
  const auto up_whole = run_tiled(upscale, lf, 2, 0, 0);
  const auto up_tiled = run_tiled(upscale, lf, 2, 6, 3);
  CHECK((up_whole.data() - up_tiled.data()).abs().maxCoeff() < 1e-12);

  const auto truth = random_lf({1, 2, 3, 34, 26}, 16);
  EvalOptions whole_opt, tiled_opt;
  whole_opt.scale = tiled_opt.scale = 2;
  tiled_opt.tile = 4;
  tiled_opt.pad = 3;
  const auto r1 = evaluate(upscale, {{"s", lf, truth}}, whole_opt);
  const auto r2 = evaluate(upscale, {{"s", lf, truth}}, tiled_opt);
  CHECK(std::abs(r1.psnr - r2.psnr) < 1e-6);
}

TEST_CASE("lr schedule halves every period") {
  CHECK(lr_at_epoch(2e-4, 0) == 2e-4);
  CHECK(lr_at_epoch(2e-4, 14) == 2e-4);
  CHECK(lr_at_epoch(2e-4, 15) == 1e-4);
  CHECK(lr_at_epoch(2e-4, 16) == 1e-4);
  CHECK(lr_at_epoch(2e-4, 79) == 2e-4 / 32);
}

TEST_CASE("training is deterministic and logs to disk") {
  const auto o = small_optics(2, 8);
  std::vector<LfPair> set;
  for (std::uint64_t s = 0; s < 3; ++s) set.push_back(make_ssr_pair(optics::render_lf(synthetic_scene(s, o), o), 2));
  model::NetworkConfig c;
  c.channels = 8;
  c.n_c42 = c.n_epix = 1;
  c.heads = 2;
  c.angular = 2;
  TrainConfig t;
  t.batch_size = 2;
  t.patch = 8;
  t.epochs = 2;
  t.steps_per_epoch = 2;
  t.lr = 1e-3;
  t.seed = 3;
  const auto dir = scratch_dir("train");
  auto run = [&](const fs::path& out) {
    model::Network<float> net(c, 1);
    auto cfg = t;
    cfg.out_dir = out;
    auto res = train(net, set, {set[0]}, cfg);
    return std::pair{res, net.params().tensors()};
  };
  const auto [r1, p1] = run(dir);
  const auto [r2, p2] = run({});
  REQUIRE(r1.steps.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r1.steps[i].loss == r2.steps[i].loss);
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK((p1[i].value() == p2[i].value()).all());
  CHECK(r1.epochs.size() == 2);
  CHECK(std::isfinite(r1.epochs[0].val_psnr));
  CHECK(fs::exists(dir / "loss.csv"));
  CHECK(fs::exists(dir / "val.csv"));
  CHECK(fs::exists(dir / "epoch_001.lfck"));
  const auto back = load_network(dir / "epoch_001.lfck");
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK((back.params().tensors()[i].value() == p1[i].value()).all());

  auto poisoned = set;
  poisoned[0].target.data()[3] = std::nan("");
  poisoned.resize(1);
  model::Network<float> net(c, 1);
  auto cfg = t;
  cfg.batch_size = 1;
  CHECK_THROWS_AS(train(net, poisoned, {}, cfg), NumericError);
  fs::remove_all(dir);
}

TEST_CASE("io round trips") {
  const auto dir = scratch_dir("io");
  const auto lf = random_lf({3, 3, 2, 5, 7}, 20);

  save_lf4d(dir / "a.lf4d", lf);
  const auto back = load_lf4d(dir / "a.lf4d");
  CHECK(back.dims() == lf.dims());
  CHECK((back.data() == lf.data().cast<float>().cast<double>()).all());
  {
    std::ofstream bad(dir / "bad.lf4d", std::ios::binary);
    bad << "LF4Dxx";
  }
  CHECK_THROWS_AS(load_lf4d(dir / "bad.lf4d"), IoError);
  CHECK_THROWS_AS(load_lf4d(dir / "missing.lf4d"), IoError);

  const auto img = random_image(9, 11, 21);
  for (int depth : {8, 16}) {
    write_png(dir / "p.png", img, depth);
    const auto rd = read_png(dir / "p.png");
    REQUIRE(rd.planes.size() == 1);
    CHECK(rd.bit_depth == depth);
    const double step = depth == 8 ? 255.0 : 65535.0;
    CHECK((rd.planes[0] - img).abs().maxCoeff() <= 0.5 / step + 1e-12);
  }

  save_png_grid(dir / "grid", lf, 16);
  const auto g = load_png_grid(dir / "grid");
  CHECK(g.dims() == lf.dims());
  CHECK((g.data() - lf.data()).abs().maxCoeff() <= 0.5 / 65535 + 1e-12);
  CHECK(load_light_field(dir / "grid").dims() == lf.dims());

  DatasetManifest m{{"a.lf4d", "grid"}};
  save_manifest(dir / "m.json", m);
  CHECK(load_manifest(dir / "m.json").scenes == std::vector<fs::path>{dir / "a.lf4d", dir / "grid"});
  save_manifest(dir / "m2.json", load_manifest(dir / "m.json"));
  CHECK(read_json(dir / "m2.json")["scenes"][1] == "grid");

  ad::ParameterStore<float> store;
  store.add("w", {2, 3}, ad::Buffer<float>::LinSpaced(6, -1.0f, 1.0f));
  store.add("b", {3}, ad::Buffer<float>::Constant(3, 0.25f));
  ad::save_checkpoint(dir / "c.lfck", store, {{"note", "x"}});
  const auto ck = ad::load_checkpoint(dir / "c.lfck");
  CHECK(ck.model["note"] == "x");
  CHECK(ck.params.at("b").shape() == ad::Shape{3});
  CHECK((ck.params.at("w").value() == store.at("w").value()).all());
  fs::remove_all(dir);
}

TEST_CASE("scene JSON rejects unknown keys and bad layers") {
  nlohmann::json j = {{"background", 0.2},
                      {"layers", {{{"depth", 0.5}, {"texture", {{"noise", 3}, {"size", 32}, {"smoothness", 4}}},
                                   {"extent", {2.0, 2.0}}}}}};
  const auto s = scene_from_json(j, ".");
  CHECK(s.layers.size() == 1);
  CHECK(s.layers[0].texture.values.rows() == 32);
  j["colour"] = 1;
  CHECK_THROWS_AS(scene_from_json(j, "."), ConfigError);
  CHECK_THROWS_AS(optics_from_json({{"z0", -1.0}}), ConfigError);
}

TEST_CASE("bicubic upsampling of the LR is closer to its own HR than to another scene") {
  const auto o = small_optics(3, 32);
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto hr = optics::render_lf(synthetic_scene(s, o), o);
    const auto other = optics::render_lf(synthetic_scene(s + 50, o), o);
    const auto up = resize_views(make_ssr_pair(hr, 2).input, 2.0);
    const Image<double> v = up.view(0, 1, 1);
    CHECK(psnr(v, hr.view(0, 1, 1)) > psnr(v, other.view(0, 1, 1)));
  }
}
