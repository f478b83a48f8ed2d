#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"

#include "relight/envmap.hpp"
#include "relight/error.hpp"
#include "relight/train.hpp"

namespace relight {

namespace {

void check_pair(const Image& prediction, const Image& target, const Image& mask, const char* what) {
  if (prediction.shape() != target.shape() || prediction.rank() != 3) {
    throw InvalidArgument(std::string(what) + ": prediction " + shape_string(prediction.shape()) + " vs target " +
                          shape_string(target.shape()));
  }
  if (mask.rank() != 3 || mask.dim(0) != target.dim(0) || mask.dim(1) != target.dim(1) || mask.dim(2) != 1) {
    throw InvalidArgument(std::string(what) + ": mask " + shape_string(mask.shape()) + " does not match " +
                          shape_string(target.shape()));
  }
}

std::vector<double> binarize(const Image& mask) {
  std::vector<double> m(static_cast<std::size_t>(mask.size()));
  bool any = false;
  for (std::int64_t i = 0; i < mask.size(); ++i) {
    m[static_cast<std::size_t>(i)] = mask[i] >= 0.5f ? 1.0 : 0.0;
    any = any || mask[i] >= 0.5f;
  }
  if (!any) throw InvalidArgument("metrics need a nonempty mask");
  return m;
}

double rmse_with_scale(const Image& p, const Image& t, const std::vector<double>& m, double alpha) {
  const int c = t.dim(2);
  double err = 0, count = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0) continue;
    for (int k = 0; k < c; ++k) {
      const auto j = static_cast<std::int64_t>(i) * c + k;
      const double d = alpha * p[j] - t[j];
      err += d * d;
    }
    count += c;
  }
  return std::sqrt(err / count);
}

// Separable filter with zero padding.
std::vector<double> gaussian_filter(const std::vector<double>& in, int h, int w, const std::vector<double>& g) {
  const int r = static_cast<int>(g.size()) / 2;
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < w) s += g[static_cast<std::size_t>(k + r)] * in[static_cast<std::size_t>(y * w + xx)];
      }
      tmp[static_cast<std::size_t>(y * w + x)] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < h) s += g[static_cast<std::size_t>(k + r)] * tmp[static_cast<std::size_t>(yy * w + x)];
      }
      out[static_cast<std::size_t>(y * w + x)] = s;
    }
  return out;
}

}  // namespace

double masked_rmse(const Image& prediction, const Image& target, const Image& mask) {
  check_pair(prediction, target, mask, "masked_rmse");
  return rmse_with_scale(prediction, target, binarize(mask), 1.0);
}

double dssim(const Image& prediction, const Image& target, const Image& mask, const SsimOptions& o) {
  check_pair(prediction, target, mask, "dssim");
  if (o.window < 1 || o.window % 2 == 0 || !(o.sigma > 0)) throw InvalidArgument("SSIM window must be odd and sigma positive");
  const std::vector<double> m = binarize(mask);
  const int h = target.dim(0), w = target.dim(1), c = target.dim(2);
  std::vector<double> g(static_cast<std::size_t>(o.window));
  const int r = o.window / 2;
  for (int k = -r; k <= r; ++k) g[static_cast<std::size_t>(k + r)] = std::exp(-(k * k) / (2 * o.sigma * o.sigma));
  const double c1 = std::pow(o.k1 * o.dynamic_range, 2), c2 = std::pow(o.k2 * o.dynamic_range, 2);

  const std::vector<double> weight = gaussian_filter(m, h, w, g);
  const auto n = m.size();
  double total = 0;
  for (int k = 0; k < c; ++k) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = prediction[static_cast<std::int64_t>(i) * c + k], b = target[static_cast<std::int64_t>(i) * c + k];
      x[i] = m[i] * a;
      y[i] = m[i] * b;
      xx[i] = m[i] * a * a;
      yy[i] = m[i] * b * b;
      xy[i] = m[i] * a * b;
    }
    x = gaussian_filter(x, h, w, g);
    y = gaussian_filter(y, h, w, g);
    xx = gaussian_filter(xx, h, w, g);
    yy = gaussian_filter(yy, h, w, g);
    xy = gaussian_filter(xy, h, w, g);
    double sum = 0;
    std::int64_t windows = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (weight[i] <= 0) continue;
      const double mx = x[i] / weight[i], my = y[i] / weight[i];
      const double vx = std::max(0.0, xx[i] / weight[i] - mx * mx);
      const double vy = std::max(0.0, yy[i] / weight[i] - my * my);
      const double cxy = xy[i] / weight[i] - mx * my;
      sum += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
    total += sum / static_cast<double>(windows);
  }
  const double ssim = total / c;
  return std::clamp((1.0 - ssim) / 2.0, 0.0, 1.0);
}

ImageMetrics image_metrics(const Image& prediction, const Image& target, const Image& mask, const SsimOptions& ssim) {
  check_pair(prediction, target, mask, "image_metrics");
  const std::vector<double> m = binarize(mask);
  const int c = target.dim(2);
  double pt = 0, pp = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0) continue;
    for (int k = 0; k < c; ++k) {
      const auto j = static_cast<std::int64_t>(i) * c + k;
      pt += static_cast<double>(prediction[j]) * target[j];
      pp += static_cast<double>(prediction[j]) * prediction[j];
    }
  }
  const double alpha = pp > 0 ? pt / pp : 0.0;
  ImageMetrics out;
  out.rmse = rmse_with_scale(prediction, target, m, 1.0);
  out.rmse_s = std::min(out.rmse, rmse_with_scale(prediction, target, m, alpha));
  out.dssim = dssim(prediction, target, mask, ssim);
  return out;
}

double light_rmse_s(const Tensor<float>& prediction, const Tensor<float>& target) {
  if (prediction.shape() != target.shape() || prediction.rank() != 3) {
    throw InvalidArgument("light_rmse_s: prediction " + shape_string(prediction.shape()) + " vs target " +
                          shape_string(target.shape()));
  }
  const int h = target.dim(0), w = target.dim(1), c = target.dim(2);
  const SolidAngleMap omega(h, w);
  double pt = 0, pp = 0;
  for (int r = 0; r < h; ++r) {
    const double o2 = omega.at(r, 0) * omega.at(r, 0);
    for (int j = 0; j < w * c; ++j) {
      const auto i = static_cast<std::int64_t>(r) * w * c + j;
      pt += o2 * prediction[i] * target[i];
      pp += o2 * prediction[i] * prediction[i];
    }
  }
  const double alpha = pp > 0 ? std::max(0.0, pt / pp) : 0.0;
  double err = 0;
  for (int r = 0; r < h; ++r) {
    const double o2 = omega.at(r, 0) * omega.at(r, 0);
    for (int j = 0; j < w * c; ++j) {
      const auto i = static_cast<std::int64_t>(r) * w * c + j;
      const double d = alpha * prediction[i] - target[i];
      err += o2 * d * d;
    }
  }
  return std::sqrt(err);
}

Predictor network_predictor(const PRNetConfig& config, const ParameterSet<float>& params) {
  return [config, params](const TrainingPair& pair) {
    Prediction p;
    const auto t0 = std::chrono::steady_clock::now();
    p.target = run_forward(config, params, pair.source, pair.target_light).image;
    p.forward_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    Inference self = run_retarget(config, params, pair.source, 0.0);
    p.source = std::move(self.image);
    p.light = std::move(self.light);
    return p;
  };
}

Predictor identity_predictor() {
  return [](const TrainingPair& pair) { return Prediction{pair.target, pair.source, pair.source_light, 0.0}; };
}

MetricsReport evaluate(const std::vector<TrainingPair>& pairs, const Predictor& predictor) {
  if (pairs.empty()) throw InvalidArgument("cannot evaluate an empty dataset");
  MetricsReport report;
  for (const TrainingPair& pair : pairs) {
    const Prediction p = predictor(pair);
    ExampleMetrics e;
    e.target = image_metrics(p.target, pair.target, pair.mask);
    e.source = image_metrics(p.source, pair.source, pair.mask);
    e.light_rmse_s = light_rmse_s(p.light, pair.source_light);
    e.forward_ms = p.forward_ms;
    report.examples.push_back(e);
  }
  const double n = static_cast<double>(report.examples.size());
  ExampleMetrics& m = report.mean;
  for (const ExampleMetrics& e : report.examples) {
    m.target.rmse += e.target.rmse / n;
    m.target.rmse_s += e.target.rmse_s / n;
    m.target.dssim += e.target.dssim / n;
    m.source.rmse += e.source.rmse / n;
    m.source.rmse_s += e.source.rmse_s / n;
    m.source.dssim += e.source.dssim / n;
    m.light_rmse_s += e.light_rmse_s / n;
    m.forward_ms += e.forward_ms / n;
  }
  return report;
}

namespace {

nlohmann::json metrics_json(const ImageMetrics& m) {
  return {{"rmse", m.rmse}, {"rmse_s", m.rmse_s}, {"dssim", m.dssim}};
}

nlohmann::json example_json(const ExampleMetrics& e, bool timing) {
  nlohmann::json j = {{"target", metrics_json(e.target)}, {"source", metrics_json(e.source)},
                      {"light_rmse_s", e.light_rmse_s}};
  if (timing) j["forward_ms"] = e.forward_ms;
  return j;
}

}  // namespace

std::string report_json(const MetricsReport& report, bool include_timing) {
  nlohmann::json examples = nlohmann::json::array();
  for (const auto& e : report.examples) examples.push_back(example_json(e, include_timing));
  return nlohmann::json{{"count", report.examples.size()},
                        {"mean", example_json(report.mean, include_timing)},
                        {"examples", examples}}
      .dump(2);
}

std::string report_table(const MetricsReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s | %-26s | %-26s | %-8s | %-8s\n", "", "Target", "Source", "Light", "Time");
  out << line;
  std::snprintf(line, sizeof line, "%-8s | %8s %8s %8s | %8s %8s %8s | %8s | %8s\n", "pair", "RMSE", "RMSE-s", "DSSIM",
                "RMSE", "RMSE-s", "DSSIM", "RMSE-s", "ms");
  out << line;
  auto row = [&](const std::string& label, const ExampleMetrics& e) {
    std::snprintf(line, sizeof line, "%-8s | %8.4f %8.4f %8.4f | %8.4f %8.4f %8.4f | %8.4f | %8.2f\n", label.c_str(),
                  e.target.rmse, e.target.rmse_s, e.target.dssim, e.source.rmse, e.source.rmse_s, e.source.dssim,
                  e.light_rmse_s, e.forward_ms);
    out << line;
  };
  for (std::size_t i = 0; i < report.examples.size(); ++i) row(std::to_string(i), report.examples[i]);
  row("mean", report.mean);
  return out.str();
}

}  // namespace relight
