#include "lfx/pipeline/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "lfx/pipeline/resize.hpp"

namespace lfx::pipeline {

double psnr(const Image<double>& a, const Image<double>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.size() == 0)
    throw ShapeError("psnr: images differ in size or are empty");
  const double mse = (a - b).square().mean();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

Eigen::VectorXd gaussian_window(int n, double sigma) {
  Eigen::VectorXd w(n);
  const double c = (n - 1) / 2.0;
  for (int i = 0; i < n; ++i) w[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  return w / w.sum();
}

// Valid-mode separable filtering with a 1D window.
Image<double> filter_valid(const Image<double>& img, const Eigen::VectorXd& w) {
  const Eigen::Index n = w.size();
  const Eigen::Index rows = img.rows() - n + 1, cols = img.cols() - n + 1;
  Image<double> tmp(img.rows(), cols);
  for (Eigen::Index r = 0; r < img.rows(); ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) acc += w[k] * img(r, c + k);
      tmp(r, c) = acc;
    }
  Image<double> out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) acc += w[k] * tmp(r + k, c);
      out(r, c) = acc;
    }
  return out;
}

}  // namespace

double ssim(const Image<double>& a, const Image<double>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.size() == 0)
    throw ShapeError("ssim: images differ in size or are empty");
  int n = int(std::min<Eigen::Index>({11, a.rows(), a.cols()}));
  if (n % 2 == 0) --n;
  const auto w = gaussian_window(n, 1.5);
  const double c1 = (0.01 * 1.0) * (0.01 * 1.0), c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const Image<double> ma = filter_valid(a, w), mb = filter_valid(b, w);
  const Image<double> saa = filter_valid(a * a, w) - ma * ma;
  const Image<double> sbb = filter_valid(b * b, w) - mb * mb;
  const Image<double> sab = filter_valid(a * b, w) - ma * mb;
  const Image<double> map = ((2 * ma * mb + c1) * (2 * sab + c2)) /
                            ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
  return map.mean();
}

SceneMetric score_scene(const std::string& name, const LightField4D<double>& pred,
                        const LightField4D<double>& truth,
                        const std::set<std::pair<std::size_t, std::size_t>>& excluded) {
  const auto& d = truth.dims();
  if (!(pred.dims() == d))
    throw ShapeError("evaluate: prediction " + to_string(pred.dims()) + " vs truth " + to_string(d));
  SceneMetric s;
  s.name = name;
  for (std::size_t u = 0; u < d.u; ++u)
    for (std::size_t v = 0; v < d.v; ++v) {
      if (excluded.count({u, v})) continue;
      const Image<double> p = pred.view(0, u, v), t = truth.view(0, u, v);
      s.views.push_back({u, v, psnr(p, t), ssim(p, t)});
    }
  return s;
}

void aggregate(MetricReport& report) {
  report.psnr = report.ssim = 0.0;
  for (auto& s : report.scenes) {
    s.psnr = s.ssim = 0.0;
    std::size_t n = 0;
    for (const auto& v : s.views) {
      if (report.excluded.count({v.u, v.v})) continue;
      s.psnr += v.psnr;
      s.ssim += v.ssim;
      ++n;
    }
    if (n == 0) throw ShapeError("evaluate: scene '" + s.name + "' has no evaluated views");
    s.psnr /= double(n);
    s.ssim /= double(n);
    report.psnr += s.psnr;
    report.ssim += s.ssim;
  }
  if (!report.scenes.empty()) {
    report.psnr /= double(report.scenes.size());
    report.ssim /= double(report.scenes.size());
  }
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "level,scene,u,v,psnr,ssim\n";
  for (const auto& s : scenes) {
    for (const auto& v : s.views)
      if (!excluded.count({v.u, v.v}))
        os << "view," << s.name << "," << v.u << "," << v.v << "," << v.psnr << "," << v.ssim << "\n";
    os << "scene," << s.name << ",,," << s.psnr << "," << s.ssim << "\n";
  }
  os << "dataset,,,," << psnr << "," << ssim << "\n";
  return os.str();
}

LightField4D<double> run_tiled(const LfModel& model, const LightField4D<double>& input,
                               std::size_t scale, std::size_t tile, std::size_t pad) {
  if (scale == 0) throw ConfigError("run_tiled: scale must be >= 1");
  const auto& d = input.dims();
  const std::size_t th = tile == 0 ? d.y : std::min(tile, d.y);
  const std::size_t tw = tile == 0 ? d.x : std::min(tile, d.x);
  LightField4D<double> out;
  for (std::size_t y0 = 0; y0 < d.y; y0 += th)
    for (std::size_t x0 = 0; x0 < d.x; x0 += tw) {
      const std::size_t h = std::min(th, d.y - y0), w = std::min(tw, d.x - x0);
      LightField4D<double> patch(LfDims{d.c, d.u, d.v, h + 2 * pad, w + 2 * pad});
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t u = 0; u < d.u; ++u)
          for (std::size_t v = 0; v < d.v; ++v)
            for (std::size_t y = 0; y < h + 2 * pad; ++y)
              for (std::size_t x = 0; x < w + 2 * pad; ++x)
                patch(c, u, v, y, x) =
                    input(c, u, v, reflect_index(long(y0 + y) - long(pad), d.y),
                          reflect_index(long(x0 + x) - long(pad), d.x));
      const auto res = model(patch);
      const auto& rd = res.dims();
      if (rd.y != (h + 2 * pad) * scale || rd.x != (w + 2 * pad) * scale)
        throw ShapeError("run_tiled: model output " + to_string(rd) + " does not match scale " +
                         std::to_string(scale));
      if (out.size() == 0) out = LightField4D<double>(LfDims{rd.c, rd.u, rd.v, d.y * scale, d.x * scale});
      for (std::size_t c = 0; c < rd.c; ++c)
        for (std::size_t u = 0; u < rd.u; ++u)
          for (std::size_t v = 0; v < rd.v; ++v)
            for (std::size_t y = 0; y < h * scale; ++y)
              for (std::size_t x = 0; x < w * scale; ++x)
                out(c, u, v, y0 * scale + y, x0 * scale + x) = res(c, u, v, pad * scale + y, pad * scale + x);
    }
  return out;
}

MetricReport evaluate(const LfModel& model, const std::vector<EvalPair>& data,
                      const EvalOptions& options) {
  MetricReport report;
  report.excluded = options.excluded;
  for (const auto& item : data) {
    const auto pred = run_tiled(model, item.input, options.scale, options.tile, options.pad);
    report.scenes.push_back(score_scene(item.name, pred, item.truth, options.excluded));
  }
  aggregate(report);
  return report;
}

}  // namespace lfx::pipeline
