#include "relight/datasynth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "relight/error.hpp"
#include "relight/pfm.hpp"

namespace relight {

using nlohmann::json;

namespace {

struct Rendered {
  Image image;
  Image light;
};

Rendered render_under(const OlatSet& olat, const EnvMap& env, const Rect& rect, const Image& mask_crop,
                      const SynthOptions& options) {
  const EnvMap resampled = resize_bilinear(env, options.projection_height, options.projection_width);
  const LedWeights weights = project_env_to_leds(resampled, olat.stage);
  const Image image = apply_mask(relight_olat(olat, weights, rect), mask_crop);
  return {resize_area(image, options.image_size, options.image_size),
          leds_to_envmap(weights, olat.stage, options.light_height, options.light_width).radiance()};
}

void divide(Image& image, float scale) {
  for (float& v : image.values()) v /= scale;
}

float peak(const Image& image, const char* which) {
  const float m = max_value(image);
  if (!(m > 0.0f) || !std::isfinite(m)) {
    throw NumericError(std::string("synthesized ") + which + " image has no positive pixel to normalize by");
  }
  return m;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json options_json(const SynthOptions& o) {
  return {{"image_size", o.image_size},
          {"light_height", o.light_height},
          {"light_width", o.light_width},
          {"crop_min_fraction", o.crop_min_fraction},
          {"crop_max_fraction", o.crop_max_fraction},
          {"rotate_envs", o.rotate_envs},
          {"jitter_max_degrees", o.jitter_max_degrees},
          {"max_attempts", o.max_attempts},
          {"projection_height", o.projection_height},
          {"projection_width", o.projection_width}};
}

SynthOptions options_from(const json& j) {
  SynthOptions o;
  o.image_size = j.at("image_size").get<int>();
  o.light_height = j.at("light_height").get<int>();
  o.light_width = j.at("light_width").get<int>();
  o.crop_min_fraction = j.at("crop_min_fraction").get<double>();
  o.crop_max_fraction = j.at("crop_max_fraction").get<double>();
  o.rotate_envs = j.at("rotate_envs").get<bool>();
  o.jitter_max_degrees = j.at("jitter_max_degrees").get<double>();
  o.max_attempts = j.at("max_attempts").get<int>();
  o.projection_height = j.at("projection_height").get<int>();
  o.projection_width = j.at("projection_width").get<int>();
  o.validate();
  return o;
}

const std::set<std::string>& split_set(const SplitRule& rule, const std::string& split, bool olats) {
  if (split == "train") return olats ? rule.train_olats : rule.train_envs;
  if (split == "validation") return olats ? rule.validation_olats : rule.validation_envs;
  throw InvalidArgument("split must be 'train' or 'validation', got '" + split + "'");
}

}  // namespace

SynthOptions SynthOptions::toy() {
  SynthOptions o;
  o.image_size = 64;
  o.light_height = 8;
  o.light_width = 16;
  return o;
}

void SynthOptions::validate() const {
  if (image_size < 1 || light_height < 1 || light_width < 1 || projection_height < 1 || projection_width < 1) {
    throw InvalidArgument("synthesis resolutions must be positive");
  }
  if (!(crop_min_fraction > 0.0 && crop_min_fraction <= crop_max_fraction && crop_max_fraction <= 1.0)) {
    throw InvalidArgument("crop fractions must satisfy 0 < min <= max <= 1");
  }
  if (!(jitter_max_degrees >= 0.0 && jitter_max_degrees <= 360.0)) {
    throw InvalidArgument("jitter range must lie in [0, 360] degrees");
  }
  if (max_attempts < 1) throw InvalidArgument("max_attempts must be at least 1");
}

SynthParams draw_synth_params(const OlatSet& olat, const SynthOptions& options, Rng& rng) {
  options.validate();
  const int side_limit = std::min(olat.height(), olat.width());
  const int lo = std::max(1, static_cast<int>(std::ceil(options.crop_min_fraction * side_limit)));
  const int hi = std::max(lo, static_cast<int>(std::floor(options.crop_max_fraction * side_limit)));
  SynthParams params;
  bool found = false;
  for (int attempt = 0; attempt < options.max_attempts && !found; ++attempt) {
    const int side = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
    const int x = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(olat.width() - side + 1)));
    const int y = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(olat.height() - side + 1)));
    params.crop = {x, y, side, side};
    found = max_value(crop(olat.mask, params.crop)) > 0.0f;
  }
  if (!found) {
    throw InvalidArgument("mask is empty in all " + std::to_string(options.max_attempts) + " sampled crops");
  }
  if (options.rotate_envs) {
    params.source_rotation = rng.uniform(0.0, 360.0);
    params.target_rotation = rng.uniform(0.0, 360.0);
  }
  if (options.jitter_max_degrees > 0.0) params.jitter = rng.uniform(0.0, options.jitter_max_degrees);
  return params;
}

TrainingPair render_pair(const OlatSet& olat, const EnvMap& source_env, const EnvMap& target_env,
                         const SynthParams& params, const SynthOptions& options) {
  options.validate();
  const Rect& rect = params.crop;
  const Image mask_crop = crop(olat.mask, rect);
  if (!(max_value(mask_crop) > 0.0f)) throw InvalidArgument("mask is empty inside the crop");

  const EnvMap source_rotated = rotate_longitude(source_env, params.source_rotation);
  Rendered src = render_under(olat, source_rotated, rect, mask_crop, options);
  Rendered tgt = render_under(olat, rotate_longitude(target_env, params.target_rotation), rect, mask_crop, options);
  Rendered jit = params.jitter == 0.0 ? src
                                      : render_under(olat, rotate_longitude(source_rotated, params.jitter), rect,
                                                     mask_crop, options);

  TrainingPair pair;
  pair.jitter = params.jitter;
  pair.source_scale = peak(src.image, "source");
  pair.target_scale = peak(tgt.image, "target");
  for (Image* img : {&src.image, &src.light, &jit.image, &jit.light}) divide(*img, pair.source_scale);
  for (Image* img : {&tgt.image, &tgt.light}) divide(*img, pair.target_scale);
  pair.source = std::move(src.image);
  pair.source_light = std::move(src.light);
  pair.target = std::move(tgt.image);
  pair.target_light = std::move(tgt.light);
  pair.source_jittered = std::move(jit.image);
  pair.source_light_jittered = std::move(jit.light);
  pair.mask = resize_area(mask_crop, options.image_size, options.image_size);
  return pair;
}

TrainingPair synth_pair(const OlatSet& olat, const EnvMap& source_env, const EnvMap& target_env, Rng& rng,
                        const SynthOptions& options) {
  return render_pair(olat, source_env, target_env, draw_synth_params(olat, options, rng), options);
}

void SplitRule::validate() const {
  for (const auto& id : train_olats)
    if (validation_olats.count(id)) throw InvalidArgument("OLAT id '" + id + "' appears in both splits");
  for (const auto& id : train_envs)
    if (validation_envs.count(id)) throw InvalidArgument("environment id '" + id + "' appears in both splits");
}

DatasetManifest build_dataset(const SynthInputs& inputs, int count, std::uint64_t seed, const SplitRule& rule,
                              const std::string& split, const SynthOptions& options,
                              const std::filesystem::path& out_dir) {
  rule.validate();
  options.validate();
  if (count < 0) throw InvalidArgument("pair count must be nonnegative");
  const auto& olat_set = split_set(rule, split, true);
  const auto& env_set = split_set(rule, split, false);
  const std::vector<std::string> olat_ids(olat_set.begin(), olat_set.end());
  const std::vector<std::string> env_ids(env_set.begin(), env_set.end());

  DatasetManifest manifest;
  manifest.split = split;
  manifest.seed = seed;
  manifest.options = options;
  if (count == 0) return manifest;
  if (olat_ids.empty() || env_ids.empty()) throw InvalidArgument("split '" + split + "' has no OLAT sets or no environments");
  for (const auto& id : olat_ids) {
    if (!inputs.olats.count(id)) throw InvalidArgument("OLAT id '" + id + "' is in the split but was not provided");
    if (inputs.olat_sources.count(id)) manifest.olat_sources[id] = inputs.olat_sources.at(id);
  }
  for (const auto& id : env_ids) {
    if (!inputs.envs.count(id)) throw InvalidArgument("environment id '" + id + "' is in the split but was not provided");
    if (inputs.env_sources.count(id)) manifest.env_sources[id] = inputs.env_sources.at(id);
  }

  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    PairRecord record;
    record.index = i;
    record.olat_id = olat_ids[rng.uniform_int(olat_ids.size())];
    record.source_env_id = env_ids[rng.uniform_int(env_ids.size())];
    record.target_env_id = env_ids[rng.uniform_int(env_ids.size())];
    const OlatSet& olat = inputs.olats.at(record.olat_id);
    record.params = draw_synth_params(olat, options, rng);
    const TrainingPair pair =
        render_pair(olat, inputs.envs.at(record.source_env_id), inputs.envs.at(record.target_env_id), record.params, options);
    char name[32];
    std::snprintf(name, sizeof name, "pairs/%05d", i);
    record.directory = name;
    record.source_scale = pair.source_scale;
    record.target_scale = pair.target_scale;
    save_pair(out_dir / record.directory, pair);
    manifest.pairs.push_back(record);
  }
  save_manifest(out_dir / "manifest.json", manifest);
  return manifest;
}

TrainingPair regenerate_pair(const DatasetManifest& manifest, const PairRecord& record, const SynthInputs& inputs) {
  auto find = [](const auto& map, const std::string& id, const char* what) -> const auto& {
    const auto it = map.find(id);
    if (it == map.end()) throw InvalidArgument(std::string(what) + " '" + id + "' was not provided");
    return it->second;
  };
  return render_pair(find(inputs.olats, record.olat_id, "OLAT id"), find(inputs.envs, record.source_env_id, "environment id"),
                     find(inputs.envs, record.target_env_id, "environment id"), record.params, manifest.options);
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  json pairs = json::array();
  for (const auto& r : manifest.pairs) {
    const Rect& c = r.params.crop;
    pairs.push_back({{"index", r.index},
                     {"directory", r.directory},
                     {"olat_id", r.olat_id},
                     {"source_env_id", r.source_env_id},
                     {"target_env_id", r.target_env_id},
                     {"crop", {c.x, c.y, c.width, c.height}},
                     {"source_rotation", r.params.source_rotation},
                     {"target_rotation", r.params.target_rotation},
                     {"jitter", r.params.jitter},
                     {"source_scale", r.source_scale},
                     {"target_scale", r.target_scale}});
  }
  const json j = {{"version", 1},
                  {"split", manifest.split},
                  {"seed", manifest.seed},
                  {"options", options_json(manifest.options)},
                  {"olat_sources", manifest.olat_sources},
                  {"env_sources", manifest.env_sources},
                  {"pairs", pairs}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  DatasetManifest m;
  try {
    const json j = json::parse(read_text(path));
    if (j.at("version").get<int>() != 1) throw IoError("unsupported dataset manifest version in " + path.string());
    m.split = j.at("split").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.options = options_from(j.at("options"));
    m.olat_sources = j.at("olat_sources").get<std::map<std::string, std::string>>();
    m.env_sources = j.at("env_sources").get<std::map<std::string, std::string>>();
    for (const auto& p : j.at("pairs")) {
      PairRecord r;
      r.index = p.at("index").get<int>();
      r.directory = p.at("directory").get<std::string>();
      r.olat_id = p.at("olat_id").get<std::string>();
      r.source_env_id = p.at("source_env_id").get<std::string>();
      r.target_env_id = p.at("target_env_id").get<std::string>();
      const auto c = p.at("crop").get<std::vector<int>>();
      if (c.size() != 4) throw IoError("crop must have 4 entries in " + path.string());
      r.params.crop = {c[0], c[1], c[2], c[3]};
      r.params.source_rotation = p.at("source_rotation").get<double>();
      r.params.target_rotation = p.at("target_rotation").get<double>();
      r.params.jitter = p.at("jitter").get<double>();
      r.source_scale = p.at("source_scale").get<float>();
      r.target_scale = p.at("target_scale").get<float>();
      m.pairs.push_back(r);
    }
  } catch (const json::exception& e) {
    throw IoError("malformed dataset manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void save_pair(const std::filesystem::path& dir, const TrainingPair& pair) {
  std::filesystem::create_directories(dir);
  write_pfm(dir / "src.pfm", pair.source);
  write_pfm(dir / "tgt.pfm", pair.target);
  write_pfm(dir / "light_src.pfm", pair.source_light);
  write_pfm(dir / "light_tgt.pfm", pair.target_light);
  write_pfm(dir / "mask.pfm", pair.mask);
  write_pfm(dir / "src_jit.pfm", pair.source_jittered);
  write_pfm(dir / "light_src_jit.pfm", pair.source_light_jittered);
}

TrainingPair load_pair(const std::filesystem::path& dir, double jitter) {
  TrainingPair pair;
  pair.source = read_pfm(dir / "src.pfm");
  pair.target = read_pfm(dir / "tgt.pfm");
  pair.source_light = read_pfm(dir / "light_src.pfm");
  pair.target_light = read_pfm(dir / "light_tgt.pfm");
  pair.mask = read_pfm(dir / "mask.pfm");
  pair.source_jittered = read_pfm(dir / "src_jit.pfm");
  pair.source_light_jittered = read_pfm(dir / "light_src_jit.pfm");
  pair.jitter = jitter;
  const Shape& s = pair.source.shape();
  if (pair.target.shape() != s || pair.source_jittered.shape() != s || pair.mask.shape() != Shape{s[0], s[1], 1} ||
      s[2] != 3 || pair.target_light.shape() != pair.source_light.shape() ||
      pair.source_light_jittered.shape() != pair.source_light.shape() || pair.source_light.dim(2) != 3) {
    throw IoError("pair in " + dir.string() + " has inconsistent image shapes");
  }
  return pair;
}

std::vector<TrainingPair> load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  std::vector<TrainingPair> pairs;
  pairs.reserve(manifest.pairs.size());
  for (const auto& r : manifest.pairs) {
    TrainingPair p = load_pair(manifest_path.parent_path() / r.directory, r.params.jitter);
    p.source_scale = r.source_scale;
    p.target_scale = r.target_scale;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

EnvMap make_sun_env(int height, int width, Vec3 sun_direction, double sun_radiance, double sun_radius_degrees,
                    double ambient) {
  if (height < 1 || width < 1) throw InvalidArgument("make_sun_env: extents must be positive");
  if (!(sun_radiance >= 0.0) || !(ambient >= 0.0) || !(sun_radius_degrees > 0.0)) {
    throw InvalidArgument("make_sun_env: radiance, ambient and radius must be nonnegative");
  }
  const Vec3 sun = normalize(sun_direction);
  const double cos_radius = std::cos(sun_radius_degrees * std::numbers::pi / 180.0);
  const PixelIndex sun_pixel = direction_to_pixel(sun, height, width);
  // Bluish sky above the horizon, darker ground below.
  const Rgb sky{0.6, 0.8, 1.0}, ground{0.3, 0.25, 0.2};
  Image img({height, width, 3});
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const Vec3 d = pixel_to_direction(r, c, height, width);
      const bool in_sun = dot(d, sun) >= cos_radius || (r == sun_pixel.row && c == sun_pixel.col);
      for (int k = 0; k < 3; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        const double base = ambient * (d.z > 0 ? sky[kk] * (0.5 + 0.5 * d.z) : ground[kk]);
        img.at(r, c, k) = static_cast<float>(in_sun ? base + sun_radiance : base);
      }
    }
  return EnvMap(std::move(img));
}

}  // namespace relight
