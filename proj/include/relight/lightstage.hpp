#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "relight/envmap.hpp"
#include "relight/geometry.hpp"
#include "relight/image.hpp"

namespace relight {

inline constexpr int kDefaultLedCount = 304;
inline constexpr double kDefaultLedSigmaDegrees = 8.0;

// LED directions are unit vectors in the camera frame (camera looks along -z,
// so +z points back toward the viewer).
struct LightStage {
  std::vector<Vec3> directions;
  double sigma_degrees = kDefaultLedSigmaDegrees;

  int size() const { return static_cast<int>(directions.size()); }
  void validate() const;
};

// Spherical Fibonacci layout. Seed 0 gives the canonical layout; any other
// seed rotates it about the vertical axis by a seed-derived angle.
LightStage make_stage(int n, std::uint64_t seed = 0);

std::string stage_to_json(const LightStage& stage);
LightStage stage_from_json(std::string_view text);
void save_stage(const std::filesystem::path& path, const LightStage& stage);
LightStage load_stage(const std::filesystem::path& path);

// Index of the LED with the smallest angular distance (ties go to the lower
// index).
int nearest_led(const LightStage& stage, Vec3 direction);

// Per-LED RGB intensities.
using LedWeights = std::vector<Rgb>;

// Solid-angle-weighted nearest-LED binning. The sum of all weights equals
// integrate(env) up to summation order.
LedWeights project_env_to_leds(const EnvMap& env, const LightStage& stage);

// Integral over the sphere of the unnormalized Gaussian exp(-g^2 / 2 s^2) in
// angular distance g.
double spherical_gaussian_normalizer(double sigma_radians);

// Each LED becomes a unit-integral spherical Gaussian. Pixel values are
// solid-angle-weighted averages over 4x4 sub-pixel directions so that the map
// integral tracks the weights even when sigma is smaller than a pixel.
EnvMap leds_to_envmap(const LedWeights& weights, const LightStage& stage, int height = 16, int width = 32);

struct OlatSet {
  LightStage stage;
  std::vector<Image> images;  // one H x W x 3 image per LED
  Image mask;                 // H x W x 1 in [0, 1]
  std::string subject_id = "subject";
  std::string camera_id = "camera";

  int height() const { return mask.dim(0); }
  int width() const { return mask.dim(1); }
  void validate() const;
};

void save_olat(const std::filesystem::path& dir, const OlatSet& olat);
OlatSet load_olat(const std::filesystem::path& dir);

// Sum over LEDs of weight (per channel) times image, accumulated in double.
// With a region, only that crop of each image is combined.
Image relight_olat(const OlatSet& olat, const LedWeights& weights, std::optional<Rect> region = std::nullopt);

// Orthographic sphere seen along -z. Center and radius are fractions of the
// image side.
struct SceneProxy {
  double center_x = 0.5, center_y = 0.5, radius = 0.4;
  Rgb albedo = {0.8, 0.6, 0.5};
  double specular = 0.2;
  double exponent = 32.0;

  void validate() const;
};

// Per LED: albedo * max(0, n.l) / pi + specular * max(0, n.h)^exponent on
// the sphere (specular only where n.l > 0), zero elsewhere. The mask is 1 at
// pixel centers covered by the sphere.
OlatSet render_olat_synthetic(const SceneProxy& scene, const LightStage& stage, int resolution);

}  // namespace relight
