#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "relight/envmap.hpp"
#include "relight/image.hpp"
#include "relight/lightstage.hpp"
#include "relight/rng.hpp"

namespace relight {

struct SynthOptions {
  int image_size = 256;
  int light_height = 16, light_width = 32;
  // Crop side as a fraction of the smaller OLAT image dimension.
  double crop_min_fraction = 0.28, crop_max_fraction = 0.57;
  bool rotate_envs = true;
  // The jitter angle is drawn uniformly from [0, jitter_max_degrees).
  double jitter_max_degrees = 360.0;
  int max_attempts = 16;
  // Environments are resampled to this grid before LED projection.
  int projection_height = 128, projection_width = 256;

  static SynthOptions toy();
  void validate() const;
};

// Everything random about one pair. Rendering from these values is
// deterministic.
struct SynthParams {
  Rect crop;
  double source_rotation = 0.0;  // degrees of longitude
  double target_rotation = 0.0;
  double jitter = 0.0;
};

struct TrainingPair {
  Image source;                // D x D x 3, peak exactly 1
  Image source_light;          // H_L x W_L x 3, same scale as source
  Image target;
  Image target_light;
  Image mask;                  // D x D x 1
  Image source_jittered;       // source re-rendered under the jittered light
  Image source_light_jittered;
  double jitter = 0.0;         // degrees
  float source_scale = 1.0f;   // peak of the unnormalized source image
  float target_scale = 1.0f;
};

// Draws crop, rotations and jitter, resampling the crop until it covers part
// of the mask.
SynthParams draw_synth_params(const OlatSet& olat, const SynthOptions& options, Rng& rng);

TrainingPair render_pair(const OlatSet& olat, const EnvMap& source_env, const EnvMap& target_env,
                         const SynthParams& params, const SynthOptions& options);

TrainingPair synth_pair(const OlatSet& olat, const EnvMap& source_env, const EnvMap& target_env, Rng& rng,
                        const SynthOptions& options);

// OLAT and environment ids assigned to each split. The two sides must not
// share any id.
struct SplitRule {
  std::set<std::string> train_olats, validation_olats;
  std::set<std::string> train_envs, validation_envs;

  void validate() const;
};

struct PairRecord {
  int index = 0;
  std::string directory;  // relative to the manifest directory
  std::string olat_id, source_env_id, target_env_id;
  SynthParams params;
  float source_scale = 1.0f, target_scale = 1.0f;
};

struct DatasetManifest {
  std::string split = "train";
  std::uint64_t seed = 0;
  SynthOptions options;
  // Optional on-disk locations of the inputs, keyed by id.
  std::map<std::string, std::string> olat_sources, env_sources;
  std::vector<PairRecord> pairs;
};

struct SynthInputs {
  std::map<std::string, OlatSet> olats;
  std::map<std::string, EnvMap> envs;
  std::map<std::string, std::string> olat_sources, env_sources;
};

// Writes `count` pairs to out_dir/pairs/<index>/ and out_dir/manifest.json.
// Pair i draws from Rng::stream(seed, i), so results do not depend on the
// order in which pairs are generated.
DatasetManifest build_dataset(const SynthInputs& inputs, int count, std::uint64_t seed, const SplitRule& rule,
                              const std::string& split, const SynthOptions& options,
                              const std::filesystem::path& out_dir);

TrainingPair regenerate_pair(const DatasetManifest& manifest, const PairRecord& record, const SynthInputs& inputs);

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

void save_pair(const std::filesystem::path& dir, const TrainingPair& pair);
TrainingPair load_pair(const std::filesystem::path& dir, double jitter);

// Loads every pair listed in the manifest at `manifest_path`.
std::vector<TrainingPair> load_dataset(const std::filesystem::path& manifest_path);

// Sky-like test environment: dim ambient gradient plus one bright sun with a
// small angular radius at the given direction.
EnvMap make_sun_env(int height, int width, Vec3 sun_direction, double sun_radiance, double sun_radius_degrees,
                    double ambient);

}  // namespace relight
