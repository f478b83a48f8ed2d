#include "relight/lightstage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "relight/error.hpp"
#include "relight/parallel.hpp"
#include "relight/pfm.hpp"
#include "relight/rng.hpp"

namespace relight {

using std::numbers::pi;
using nlohmann::json;

namespace {

constexpr double kUnitTolerance = 1e-9;

json stage_json(const LightStage& stage) {
  json dirs = json::array();
  for (const Vec3& d : stage.directions) dirs.push_back({d.x, d.y, d.z});
  return {{"sigma_degrees", stage.sigma_degrees}, {"directions", dirs}};
}

LightStage stage_from(const json& j) {
  LightStage stage;
  try {
    stage.sigma_degrees = j.at("sigma_degrees").get<double>();
    for (const auto& d : j.at("directions")) {
      if (d.size() != 3) throw InvalidArgument("stage direction must have 3 components");
      stage.directions.push_back({d[0].get<double>(), d[1].get<double>(), d[2].get<double>()});
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed light stage JSON: ") + e.what());
  }
  stage.validate();
  return stage;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void check_weight_count(const LedWeights& weights, const LightStage& stage, const char* op) {
  if (static_cast<int>(weights.size()) != stage.size()) {
    throw InvalidArgument(std::string(op) + ": " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(stage.size()) + " LEDs");
  }
}

}  // namespace

void LightStage::validate() const {
  if (directions.empty()) throw InvalidArgument("light stage has no LEDs");
  if (!(sigma_degrees > 0.0) || !std::isfinite(sigma_degrees)) throw InvalidArgument("LED sigma must be positive");
  for (std::size_t i = 0; i < directions.size(); ++i) {
    const Vec3& d = directions[i];
    if (!std::isfinite(d.x) || !std::isfinite(d.y) || !std::isfinite(d.z) || std::abs(norm(d) - 1.0) > kUnitTolerance) {
      throw InvalidArgument("LED " + std::to_string(i) + " direction is not unit length");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (directions[j] == d) throw InvalidArgument("LEDs " + std::to_string(j) + " and " + std::to_string(i) + " coincide");
    }
  }
}

LightStage make_stage(int n, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("make_stage: need at least one LED");
  const double golden_angle = pi * (3.0 - std::sqrt(5.0));
  double offset = 0.0;
  if (seed != 0) offset = 2.0 * pi * Rng(seed).uniform();
  LightStage stage;
  stage.directions.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = i * golden_angle + offset;
    stage.directions.push_back(normalize({r * std::cos(phi), r * std::sin(phi), z}));
  }
  return stage;
}

std::string stage_to_json(const LightStage& stage) { return stage_json(stage).dump(2); }

LightStage stage_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("light stage JSON does not parse: ") + e.what());
  }
  return stage_from(j);
}

void save_stage(const std::filesystem::path& path, const LightStage& stage) {
  stage.validate();
  write_text(path, stage_to_json(stage) + "\n");
}

LightStage load_stage(const std::filesystem::path& path) { return stage_from_json(read_text(path)); }

int nearest_led(const LightStage& stage, Vec3 direction) {
  int best = 0;
  double best_dot = -2.0;
  for (int j = 0; j < stage.size(); ++j) {
    const double d = dot(stage.directions[static_cast<std::size_t>(j)], direction);
    if (d > best_dot) {
      best_dot = d;
      best = j;
    }
  }
  return best;
}

LedWeights project_env_to_leds(const EnvMap& env, const LightStage& stage) {
  if (stage.directions.empty()) throw InvalidArgument("project_env_to_leds: empty stage");
  const int h = env.height(), w = env.width();
  const SolidAngleMap omega(h, w);
  std::vector<int> owner(static_cast<std::size_t>(h) * w);
  parallel_for(h, [&](std::int64_t r) {
    for (int c = 0; c < w; ++c) {
      owner[static_cast<std::size_t>(r) * w + c] = nearest_led(stage, pixel_to_direction(static_cast<int>(r), c, h, w));
    }
  });
  LedWeights weights(static_cast<std::size_t>(stage.size()), Rgb{0, 0, 0});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      Rgb& acc = weights[static_cast<std::size_t>(owner[static_cast<std::size_t>(r) * w + c])];
      for (int k = 0; k < 3; ++k) acc[static_cast<std::size_t>(k)] += env.at(r, c, k) * omega.at(r, c);
    }
  return weights;
}

double spherical_gaussian_normalizer(double sigma_radians) {
  // Composite Simpson of exp(-g^2 / 2s^2) sin(g), times 2 pi. Beyond 40
  // sigma the integrand underflows, so the range is cut there.
  const int n = 4096;
  const double upper = std::min(pi, 40.0 * sigma_radians);
  const double step = upper / n;
  auto f = [&](double g) { return std::exp(-g * g / (2.0 * sigma_radians * sigma_radians)) * std::sin(g); };
  double s = f(0.0) + f(upper);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * step);
  return 2.0 * pi * s * step / 3.0;
}

EnvMap leds_to_envmap(const LedWeights& weights, const LightStage& stage, int height, int width) {
  check_weight_count(weights, stage, "leds_to_envmap");
  if (height < 1 || width < 1) throw InvalidArgument("leds_to_envmap: map extents must be at least 1");
  const double sigma = stage.sigma_degrees * pi / 180.0;
  const double inv_z = 1.0 / spherical_gaussian_normalizer(sigma);
  std::vector<int> active;
  for (int j = 0; j < stage.size(); ++j) {
    const Rgb& wj = weights[static_cast<std::size_t>(j)];
    for (double v : wj)
      if (!std::isfinite(v)) throw NumericError("leds_to_envmap: non-finite LED weight");
    if (wj[0] != 0.0 || wj[1] != 0.0 || wj[2] != 0.0) active.push_back(j);
  }
  // Sub-pixel samples are weighted by the solid angle of their sub-band so
  // the pixel value is an area average (this matters in the polar rows).
  constexpr int kSub = 4;
  Image out({height, width, 3});
  parallel_for(height, [&](std::int64_t row) {
    const int r = static_cast<int>(row);
    double band_weight[kSub];
    double band_total = 0.0;
    for (int a = 0; a < kSub; ++a) {
      band_weight[a] = std::cos(pi * (r + static_cast<double>(a) / kSub) / height) -
                       std::cos(pi * (r + static_cast<double>(a + 1) / kSub) / height);
      band_total += band_weight[a];
    }
    for (int c = 0; c < width; ++c) {
      double acc[3] = {0, 0, 0};
      for (int a = 0; a < kSub; ++a) {
        const double polar = pi * (r + (a + 0.5) / kSub) / height;
        for (int b = 0; b < kSub; ++b) {
          const Vec3 d = lat_long_to_direction(polar, 2.0 * pi * (c + (b + 0.5) / kSub) / width);
          for (int j : active) {
            const double g = angle_between(d, stage.directions[static_cast<std::size_t>(j)]);
            const double value = band_weight[a] * std::exp(-g * g / (2.0 * sigma * sigma));
            const Rgb& wj = weights[static_cast<std::size_t>(j)];
            for (int k = 0; k < 3; ++k) acc[k] += wj[static_cast<std::size_t>(k)] * value;
          }
        }
      }
      for (int k = 0; k < 3; ++k) out.at(r, c, k) = static_cast<float>(acc[k] * inv_z / (band_total * kSub));
    }
  });
  return EnvMap(std::move(out));
}

void OlatSet::validate() const {
  stage.validate();
  if (mask.rank() != 3 || mask.dim(2) != 1) throw InvalidArgument("OLAT mask must be H x W x 1");
  if (static_cast<int>(images.size()) != stage.size()) {
    throw InvalidArgument("OLAT set has " + std::to_string(images.size()) + " images for " +
                          std::to_string(stage.size()) + " LEDs");
  }
  for (float m : mask.values())
    if (!(m >= 0.0f && m <= 1.0f)) throw InvalidArgument("OLAT mask values must lie in [0, 1]");
  const Shape expected{height(), width(), 3};
  for (std::size_t j = 0; j < images.size(); ++j) {
    if (images[j].shape() != expected) {
      throw InvalidArgument("OLAT image " + std::to_string(j) + " has shape " + shape_string(images[j].shape()) +
                            ", expected " + shape_string(expected));
    }
    for (float v : images[j].values()) {
      if (!std::isfinite(v)) throw NumericError("OLAT image " + std::to_string(j) + " has non-finite values");
      if (v < 0.0f) throw InvalidArgument("OLAT image " + std::to_string(j) + " has negative values");
    }
  }
}

void save_olat(const std::filesystem::path& dir, const OlatSet& olat) {
  olat.validate();
  std::filesystem::create_directories(dir);
  json files = json::array();
  for (std::size_t j = 0; j < olat.images.size(); ++j) {
    char name[32];
    std::snprintf(name, sizeof name, "olat_%03zu.pfm", j);
    write_pfm(dir / name, olat.images[j]);
    files.push_back(name);
  }
  write_pfm(dir / "mask.pfm", olat.mask);
  const json manifest = {{"stage", stage_json(olat.stage)},
                         {"subject_id", olat.subject_id},
                         {"camera_id", olat.camera_id},
                         {"images", files},
                         {"mask", "mask.pfm"}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

OlatSet load_olat(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("OLAT manifest in " + dir.string() + " does not parse: " + e.what());
  }
  OlatSet olat;
  try {
    olat.stage = stage_from(manifest.at("stage"));
    olat.subject_id = manifest.value("subject_id", "subject");
    olat.camera_id = manifest.value("camera_id", "camera");
    for (const auto& name : manifest.at("images")) olat.images.push_back(read_pfm(dir / name.get<std::string>()));
    olat.mask = read_pfm(dir / manifest.at("mask").get<std::string>());
  } catch (const json::exception& e) {
    throw IoError("OLAT manifest in " + dir.string() + " is malformed: " + e.what());
  }
  olat.validate();
  return olat;
}

Image relight_olat(const OlatSet& olat, const LedWeights& weights, std::optional<Rect> region) {
  check_weight_count(weights, olat.stage, "relight_olat");
  if (olat.images.size() != weights.size()) throw InvalidArgument("relight_olat: OLAT set does not match its stage");
  const Rect rect = region.value_or(Rect{0, 0, olat.width(), olat.height()});
  if (rect.width < 1 || rect.height < 1 || rect.x < 0 || rect.y < 0 || rect.x + rect.width > olat.width() ||
      rect.y + rect.height > olat.height()) {
    throw InvalidArgument("relight_olat: region outside the OLAT images");
  }
  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    for (double v : weights[j])
      if (!std::isfinite(v)) throw NumericError("relight_olat: non-finite LED weight");
    if (weights[j][0] != 0.0 || weights[j][1] != 0.0 || weights[j][2] != 0.0) active.push_back(j);
  }
  Image out({rect.height, rect.width, 3});
  parallel_for(rect.height, [&](std::int64_t row) {
    const int y = rect.y + static_cast<int>(row);
    std::vector<double> acc(static_cast<std::size_t>(rect.width) * 3, 0.0);
    for (std::size_t j : active) {
      const Rgb& wj = weights[j];
      const float* src = &olat.images[j].at(y, rect.x, 0);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += wj[i % 3] * src[i];
    }
    float* dst = &out.at(static_cast<int>(row), 0, 0);
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i]);
  });
  return out;
}

void SceneProxy::validate() const {
  if (!(radius > 0.0) || !std::isfinite(radius) || !std::isfinite(center_x) || !std::isfinite(center_y)) {
    throw InvalidArgument("degenerate sphere: radius must be positive and the center finite");
  }
  for (double a : albedo)
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("albedo components must lie in [0, 1]");
  if (!(specular >= 0.0) || !std::isfinite(specular)) throw InvalidArgument("specular strength must be nonnegative");
  if (!(exponent >= 1.0) || !std::isfinite(exponent)) throw InvalidArgument("specular exponent must be at least 1");
}

OlatSet render_olat_synthetic(const SceneProxy& scene, const LightStage& stage, int resolution) {
  scene.validate();
  stage.validate();
  if (resolution < 16) throw InvalidArgument("render_olat_synthetic: resolution must be at least 16");
  const int n = resolution;
  // Surface normals at pixel centers; image y grows downward, world y upward.
  std::vector<Vec3> normals(static_cast<std::size_t>(n) * n);
  Image mask({n, n, 1});
  bool any = false;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double u = ((x + 0.5) / n - scene.center_x) / scene.radius;
      const double v = -((y + 0.5) / n - scene.center_y) / scene.radius;
      const double rr = u * u + v * v;
      if (rr >= 1.0) continue;
      normals[static_cast<std::size_t>(y) * n + x] = {u, v, std::sqrt(1.0 - rr)};
      mask.at(y, x, 0) = 1.0f;
      any = true;
    }
  if (!any) throw InvalidArgument("degenerate sphere: it covers no pixel centers");

  const Vec3 view{0, 0, 1};
  OlatSet olat;
  olat.stage = stage;
  olat.mask = mask;
  olat.subject_id = "sphere";
  olat.camera_id = "ortho";
  olat.images.assign(static_cast<std::size_t>(stage.size()), Image({n, n, 3}));
  parallel_for(stage.size(), [&](std::int64_t j) {
    const Vec3 l = stage.directions[static_cast<std::size_t>(j)];
    const bool has_half = norm(l + view) > 1e-12;
    const Vec3 half = has_half ? normalize(l + view) : view;
    Image& img = olat.images[static_cast<std::size_t>(j)];
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        if (mask.at(y, x, 0) == 0.0f) continue;
        const Vec3 nrm = normals[static_cast<std::size_t>(y) * n + x];
        const double ndotl = dot(nrm, l);
        if (ndotl <= 0.0) continue;
        const double spec = has_half ? scene.specular * std::pow(std::max(0.0, dot(nrm, half)), scene.exponent) : 0.0;
        for (int k = 0; k < 3; ++k) {
          img.at(y, x, k) = static_cast<float>(scene.albedo[static_cast<std::size_t>(k)] * ndotl / pi + spec);
        }
      }
  });
  return olat;
}

}  // namespace relight
