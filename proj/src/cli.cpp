#include "relight/cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"

#include "relight/checkpoint.hpp"
#include "relight/datasynth.hpp"
#include "relight/error.hpp"
#include "relight/gradsuite.hpp"
#include "relight/lightstage.hpp"
#include "relight/pfm.hpp"
#include "relight/png.hpp"
#include "relight/prnet.hpp"
#include "relight/train.hpp"

namespace relight {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- Option blocks ------------------------------------------------------------

struct GenStageArgs {
  int count = kDefaultLedCount;
  double sigma = kDefaultLedSigmaDegrees;
  std::string out;
};

struct RenderOlatArgs {
  std::string stage, out, subject = "subject";
  int resolution = 128;
  SceneProxy scene;
  std::vector<double> albedo{0.8, 0.6, 0.5};
};

struct SynthEnvArgs {
  int height = 64, width = 128;
  std::optional<double> azimuth, elevation;
  double sun_radiance = 50, sun_radius = 6, ambient = 0.3;
  std::string out, png;
};

struct ProjectEnvArgs {
  std::string stage, env, out, light_out;
  int height = 16, width = 32;
};

struct SynthPairsArgs {
  std::vector<std::string> olats, envs;
  int count = 8;
  std::string split = "train", out;
  SynthOptions options = SynthOptions::toy();
  bool no_rotate = false;
};

struct TrainArgs {
  std::string data, out, resume, preset = "toy";
  bool scalar_confidence = false;
  TrainConfig train;
};

struct InputArgs {
  std::string input, mask, ckpt, out, png;
};

struct RelightArgs {
  InputArgs io;
  std::string light, composite;
  double light_scale = 1.0;
};

struct RetargetArgs {
  InputArgs io;
  double theta = 0;
  std::string light_out;
};

struct EstimateArgs {
  InputArgs io;
  bool clamp = false;
  std::string confidence_out;
};

struct EvalArgs {
  std::string data, ckpt, out;
  bool identity = false;
};

struct GradCheckArgs {
  std::string scope = "all";
  double step = 1e-5, tolerance = 1e-3;
};

// ---- Helpers ------------------------------------------------------------------

std::string file_id(const fs::path& p) {
  fs::path q = p;
  if (!q.has_filename()) q = q.parent_path();
  return q.stem().string();
}

Vec3 direction_from_degrees(double azimuth, double elevation) {
  const double az = azimuth * std::numbers::pi / 180, el = elevation * std::numbers::pi / 180;
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

PRNetConfig preset(const std::string& name) {
  if (name == "toy") return PRNetConfig::toy();
  if (name == "full") return PRNetConfig::full_scale();
  if (name == "gradcheck") return PRNetConfig::grad_check();
  throw InvalidArgument("unknown network preset '" + name + "' (toy, full, gradcheck)");
}

// Reads the input image and mask, resamples both to the network input size
// and masks the image.
struct NetworkInput {
  Image image, mask;
};

NetworkInput load_input(const InputArgs& a, int size) {
  Image image = read_pfm(a.input);
  if (image.dim(2) != 3) throw InvalidArgument("input image must have 3 channels");
  Image mask = a.mask.empty() ? Image({image.dim(0), image.dim(1), 1}, 1.0f) : read_pfm(a.mask);
  if (mask.dim(2) != 1 || mask.dim(0) != image.dim(0) || mask.dim(1) != image.dim(1)) {
    throw InvalidArgument("mask " + shape_string(mask.shape()) + " does not match input " + shape_string(image.shape()));
  }
  if (image.dim(0) != size || image.dim(1) != size) {
    image = resize_area(image, size, size);
    mask = resize_area(mask, size, size);
  }
  return {apply_mask(image, mask), mask};
}

void write_image(const InputArgs& a, const Image& image) {
  write_pfm(a.out, image);
  if (!a.png.empty()) export_png(a.png, image);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << "\n";
  if (!f) throw IoError("write failed for " + path.string());
}

json echo_options(const CLI::App& sub) {
  json options = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames()[0] == "help") continue;
    const std::string& name = opt->get_lnames()[0];
    if (opt->count() > 0) {
      const auto& r = opt->results();
      if (opt->get_expected_max() > 1) {
        options[name] = r;
      } else if (opt->get_type_size() == 0) {
        options[name] = true;
      } else {
        options[name] = r.empty() ? std::string() : r.back();
      }
    } else {
      options[name] = opt->get_default_str();
    }
  }
  return {{"command", sub.get_name()}, {"options", options}};
}

// ---- Commands -----------------------------------------------------------------

int cmd_gen_stage(const GenStageArgs& a, std::uint64_t seed, std::ostream& out) {
  LightStage stage = make_stage(a.count, seed);
  stage.sigma_degrees = a.sigma;
  stage.validate();
  save_stage(a.out, stage);
  out << "wrote " << stage.size() << " LEDs to " << a.out << "\n";
  return kExitOk;
}

int cmd_render_olat(RenderOlatArgs a, std::ostream& out) {
  if (a.albedo.size() != 3) throw InvalidArgument("--albedo takes three values");
  a.scene.albedo = {a.albedo[0], a.albedo[1], a.albedo[2]};
  OlatSet olat = render_olat_synthetic(a.scene, load_stage(a.stage), a.resolution);
  olat.subject_id = a.subject;
  save_olat(a.out, olat);
  out << "wrote " << olat.images.size() << " OLAT images of " << a.resolution << "x" << a.resolution << " to "
      << a.out << "\n";
  return kExitOk;
}

int cmd_synth_env(SynthEnvArgs a, std::uint64_t seed, std::ostream& out) {
  Rng rng(seed);
  const double az = a.azimuth ? *a.azimuth : rng.uniform(0, 360);
  const double el = a.elevation ? *a.elevation : rng.uniform(10, 70);
  const EnvMap env = make_sun_env(a.height, a.width, direction_from_degrees(az, el), a.sun_radiance, a.sun_radius,
                                  a.ambient);
  write_pfm(a.out, env.radiance());
  if (!a.png.empty()) export_png(a.png, env.radiance());
  out << "sun at azimuth " << az << " elevation " << el << " -> " << a.out << "\n";
  return kExitOk;
}

int cmd_project_env(const ProjectEnvArgs& a, std::ostream& out) {
  const LightStage stage = load_stage(a.stage);
  const EnvMap env(read_pfm(a.env));
  const LedWeights weights = project_env_to_leds(env, stage);
  json w = json::array();
  for (const Rgb& v : weights) w.push_back({v[0], v[1], v[2]});
  write_json(a.out, {{"led_count", weights.size()}, {"weights", w}});
  if (!a.light_out.empty()) write_pfm(a.light_out, leds_to_envmap(weights, stage, a.height, a.width).radiance());
  const Rgb total = integrate(env);
  out << "projected " << a.env << " onto " << weights.size() << " LEDs, irradiance " << total[0] << " " << total[1]
      << " " << total[2] << "\n";
  return kExitOk;
}

int cmd_synth_pairs(SynthPairsArgs a, std::uint64_t seed, std::ostream& out) {
  if (a.olats.empty() || a.envs.empty()) throw InvalidArgument("synth-pairs needs at least one --olat and one --env");
  if (a.split != "train" && a.split != "validation") throw InvalidArgument("--split must be train or validation");
  if (a.no_rotate) a.options.rotate_envs = false;
  SynthInputs inputs;
  SplitRule rule;
  auto& olat_ids = a.split == "train" ? rule.train_olats : rule.validation_olats;
  auto& env_ids = a.split == "train" ? rule.train_envs : rule.validation_envs;
  for (const auto& p : a.olats) {
    const std::string id = file_id(p);
    if (!olat_ids.insert(id).second) throw InvalidArgument("duplicate OLAT id " + id);
    inputs.olats.emplace(id, load_olat(p));
    inputs.olat_sources[id] = fs::absolute(p).string();
  }
  for (const auto& p : a.envs) {
    const std::string id = file_id(p);
    if (!env_ids.insert(id).second) throw InvalidArgument("duplicate environment id " + id);
    inputs.envs.emplace(id, EnvMap(read_pfm(p)));
    inputs.env_sources[id] = fs::absolute(p).string();
  }
  const DatasetManifest m = build_dataset(inputs, a.count, seed, rule, a.split, a.options, a.out);
  out << "wrote " << m.pairs.size() << " " << a.split << " pairs to " << a.out << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const DatasetManifest manifest = load_manifest(a.data);
  PRNetConfig net = preset(a.preset);
  net.input_size = manifest.options.image_size;
  net.light_height = manifest.options.light_height;
  net.light_width = manifest.options.light_width;
  net.scalar_confidence = a.scalar_confidence;
  net.validate();
  const std::vector<TrainingPair> pairs = load_dataset(a.data);
  FitOptions fo;
  fo.net = net;
  fo.train = a.train;
  fo.out_dir = a.out;
  if (!a.resume.empty()) fo.resume = fs::path(a.resume);
  const FitResult r = fit(pairs, fo);
  if (!r.log.empty()) {
    out << "trained " << r.log.size() << " steps on " << pairs.size() << " pairs, first loss " << r.log.front().loss.total
        << ", last loss " << r.log.back().loss.total << "\n";
  }
  out << "checkpoint: " << (fs::path(a.out) / "checkpoint").string() << "\n";
  return kExitOk;
}

Tensor<float> target_light_for(const PRNetConfig& config, const Image& light, double scale) {
  Tensor<float> out = light;
  if (light.rank() != 3 || light.dim(2) != 3) throw InvalidArgument("light must be an H x W x 3 image");
  if (light.dim(0) != config.light_height || light.dim(1) != config.light_width) {
    out = resize_solid_angle(EnvMap(light), config.light_height, config.light_width).radiance();
  }
  if (scale != 1.0)
    for (auto& v : out.storage()) v = static_cast<float>(v * scale);
  return out;
}

int cmd_relight(const RelightArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.io.ckpt);
  const NetworkInput in = load_input(a.io, ck.config.input_size);
  const Tensor<float> light = target_light_for(ck.config, read_pfm(a.light), a.light_scale);
  const Image image = apply_mask(run_forward(ck.config, ck.params, in.image, light).image, in.mask);
  write_image(a.io, image);
  if (!a.composite.empty()) {
    // Relit foreground over the target environment upsampled to image size.
    Image bg = light;
    for (auto& v : bg.storage()) v = std::max(v, 0.0f);
    bg = resize_bilinear(EnvMap(bg), image.dim(0), image.dim(1)).radiance();
    Image comp = image;
    for (int y = 0; y < image.dim(0); ++y)
      for (int x = 0; x < image.dim(1); ++x)
        for (int k = 0; k < 3; ++k) comp.at(y, x, k) += (1.0f - in.mask.at(y, x, 0)) * bg.at(y, x, k);
    write_pfm(a.composite, comp);
  }
  out << "relit " << a.io.input << " -> " << a.io.out << "\n";
  return kExitOk;
}

int cmd_retarget(const RetargetArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.io.ckpt);
  const NetworkInput in = load_input(a.io, ck.config.input_size);
  const Inference r = run_retarget(ck.config, ck.params, in.image, a.theta);
  write_image(a.io, apply_mask(r.image, in.mask));
  if (!a.light_out.empty()) write_pfm(a.light_out, r.light);
  out << "retargeted " << a.io.input << " by " << a.theta << " degrees -> " << a.io.out << "\n";
  return kExitOk;
}

int cmd_estimate_light(const EstimateArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.io.ckpt);
  const NetworkInput in = load_input(a.io, ck.config.input_size);
  const Inference r = run_estimate_light(ck.config, ck.params, in.image);
  Tensor<float> light = r.light;
  if (a.clamp)
    for (auto& v : light.storage()) v = std::max(v, 0.0f);
  write_pfm(a.io.out, light);
  if (!a.io.png.empty()) export_png(a.io.png, light);
  if (!a.confidence_out.empty()) {
    const Tensor<float>& c = r.confidence;
    // Hb x Wb x channels written as a single-row-per-location grayscale map.
    write_pfm(a.confidence_out, c.reshaped({c.dim(0) * c.dim(1), c.dim(2), 1}));
  }
  out << "estimated light " << light.dim(0) << "x" << light.dim(1) << " -> " << a.io.out << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const std::vector<TrainingPair> pairs = load_dataset(a.data);
  MetricsReport report;
  if (a.identity) {
    report = evaluate(pairs, identity_predictor());
  } else {
    if (a.ckpt.empty()) throw InvalidArgument("eval needs --ckpt unless --identity is given");
    const Checkpoint ck = load_checkpoint(a.ckpt);
    report = evaluate(pairs, network_predictor(ck.config, ck.params));
  }
  out << report_table(report);
  if (!a.out.empty()) write_json(a.out, json::parse(report_json(report)));
  return kExitOk;
}

int cmd_gradcheck(const GradCheckArgs& a, std::uint64_t seed, std::ostream& out) {
  if (a.scope != "all" && a.scope != "primitives" && a.scope != "network") {
    throw InvalidArgument("--scope must be all, primitives or network");
  }
  GradCheckOptions options;
  options.tolerance = a.tolerance;
  options.seed = seed;
  std::vector<NamedGradCheck> checks;
  if (a.scope != "network") checks = primitive_gradchecks(seed, options);
  if (a.scope != "primitives") {
    for (auto& c : network_gradchecks(seed, PRNetConfig::grad_check(), a.step)) checks.push_back(std::move(c));
  }
  bool ok = true;
  for (auto& c : checks) {
    c.report.passed = c.report.max_rel_error <= a.tolerance;
    ok = ok && c.report.passed;
    out << (c.report.passed ? "PASS " : "FAIL ") << c.name << " max_rel_error " << c.report.max_rel_error
        << " elements " << c.report.checked << " kink_retries " << c.report.refined << "\n";
  }
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Single-image portrait relighting pipeline", args.empty() ? "relight" : args[0]};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  bool verbose = false;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "random seed");
    sub->add_flag("--verbose", verbose, "echo the resolved configuration as JSON");
  };

  GenStageArgs gs;
  auto* gen_stage = app.add_subcommand("gen-stage", "write a light-stage LED layout");
  gen_stage->add_option("--count", gs.count, "number of LEDs");
  gen_stage->add_option("--sigma", gs.sigma, "LED footprint in degrees");
  gen_stage->add_option("--out", gs.out, "output JSON")->required();
  common(gen_stage);

  RenderOlatArgs ro;
  auto* render = app.add_subcommand("render-olat", "render a synthetic OLAT set");
  render->add_option("--stage", ro.stage, "stage JSON")->required();
  render->add_option("--resolution", ro.resolution, "image side in pixels");
  render->add_option("--out", ro.out, "output directory")->required();
  render->add_option("--subject-id", ro.subject, "subject id");
  render->add_option("--center-x", ro.scene.center_x, "sphere center, fraction of width");
  render->add_option("--center-y", ro.scene.center_y, "sphere center, fraction of height");
  render->add_option("--radius", ro.scene.radius, "sphere radius, fraction of width");
  render->add_option("--albedo", ro.albedo, "diffuse albedo r g b")->expected(3);
  render->add_option("--specular", ro.scene.specular, "specular weight");
  render->add_option("--exponent", ro.scene.exponent, "specular exponent");
  common(render);

  SynthEnvArgs se;
  auto* synth_env = app.add_subcommand("synth-env", "write a sky environment with one dominant sun");
  synth_env->add_option("--height", se.height, "map rows");
  synth_env->add_option("--width", se.width, "map columns");
  synth_env->add_option("--azimuth", se.azimuth, "sun longitude in degrees (random from --seed if absent)");
  synth_env->add_option("--elevation", se.elevation, "sun elevation in degrees (random from --seed if absent)");
  synth_env->add_option("--sun-radiance", se.sun_radiance, "sun radiance");
  synth_env->add_option("--sun-radius", se.sun_radius, "sun angular radius in degrees");
  synth_env->add_option("--ambient", se.ambient, "sky radiance");
  synth_env->add_option("--out", se.out, "output PFM")->required();
  synth_env->add_option("--png", se.png, "optional preview");
  common(synth_env);

  ProjectEnvArgs pe;
  auto* project = app.add_subcommand("project-env", "project an environment onto the LED basis");
  project->add_option("--stage", pe.stage, "stage JSON")->required();
  project->add_option("--env", pe.env, "environment PFM")->required();
  project->add_option("--out", pe.out, "output weights JSON")->required();
  project->add_option("--light-out", pe.light_out, "optional back-projected light map PFM");
  project->add_option("--height", pe.height, "back-projection rows");
  project->add_option("--width", pe.width, "back-projection columns");
  common(project);

  SynthPairsArgs sp;
  auto* synth_pairs = app.add_subcommand("synth-pairs", "synthesize relighting training pairs");
  synth_pairs->add_option("--olat", sp.olats, "OLAT directory (repeatable)")->required();
  synth_pairs->add_option("--env", sp.envs, "environment PFM (repeatable)")->required();
  synth_pairs->add_option("--count", sp.count, "number of pairs");
  synth_pairs->add_option("--split", sp.split, "train or validation");
  synth_pairs->add_option("--out", sp.out, "output directory")->required();
  synth_pairs->add_option("--image-size", sp.options.image_size, "pair image side");
  synth_pairs->add_option("--light-height", sp.options.light_height, "light map rows");
  synth_pairs->add_option("--light-width", sp.options.light_width, "light map columns");
  synth_pairs->add_option("--crop-min", sp.options.crop_min_fraction, "smallest crop side fraction");
  synth_pairs->add_option("--crop-max", sp.options.crop_max_fraction, "largest crop side fraction");
  synth_pairs->add_option("--jitter-max", sp.options.jitter_max_degrees, "largest self-supervision jitter, degrees");
  synth_pairs->add_option("--projection-height", sp.options.projection_height, "projection grid rows");
  synth_pairs->add_option("--projection-width", sp.options.projection_width, "projection grid columns");
  synth_pairs->add_flag("--no-rotate", sp.no_rotate, "keep environments unrotated");
  common(synth_pairs);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train the relighting network");
  train->add_option("--data", tr.data, "training manifest")->required();
  train->add_option("--out", tr.out, "output directory")->required();
  train->add_option("--steps", tr.train.steps, "total optimizer steps");
  train->add_option("--lr", tr.train.learning_rate, "Adam learning rate");
  train->add_option("--batch", tr.train.batch_size, "pairs per step");
  train->add_option("--lambda-light", tr.train.lambda_light, "light loss weight");
  train->add_option("--lambda-self", tr.train.lambda_self, "self-supervision loss weight");
  train->add_option("--checkpoint-every", tr.train.checkpoint_every, "steps between checkpoints, 0 for final only");
  train->add_option("--resume", tr.resume, "checkpoint directory to continue from");
  train->add_option("--preset", tr.preset, "network preset: toy, full or gradcheck");
  train->add_flag("--scalar-confidence", tr.scalar_confidence, "one confidence per bottleneck location");
  common(train);

  auto input_options = [](CLI::App* sub, InputArgs& io) {
    sub->add_option("--input", io.input, "input image PFM")->required();
    sub->add_option("--mask", io.mask, "foreground mask PFM");
    sub->add_option("--ckpt", io.ckpt, "checkpoint directory")->required();
    sub->add_option("--out", io.out, "output PFM")->required();
    sub->add_option("--png", io.png, "optional preview");
  };

  RelightArgs rl;
  auto* relight_cmd = app.add_subcommand("relight", "relight an image under a target environment");
  input_options(relight_cmd, rl.io);
  relight_cmd->add_option("--light", rl.light, "target environment PFM")->required();
  relight_cmd->add_option("--light-scale", rl.light_scale, "multiplier applied to the target light");
  relight_cmd->add_option("--composite", rl.composite, "optional composite over the environment");
  common(relight_cmd);

  RetargetArgs rt;
  auto* retarget = app.add_subcommand("retarget", "rotate the estimated illumination and re-render");
  input_options(retarget, rt.io);
  retarget->add_option("--theta", rt.theta, "rotation in degrees of longitude");
  retarget->add_option("--light-out", rt.light_out, "optional estimated light PFM");
  common(retarget);

  EstimateArgs el;
  auto* estimate = app.add_subcommand("estimate-light", "estimate the illumination of an image");
  input_options(estimate, el.io);
  estimate->add_flag("--clamp", el.clamp, "clamp negative light values to zero");
  estimate->add_option("--confidence-out", el.confidence_out, "optional confidence map PFM");
  common(estimate);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "report relighting metrics on a dataset");
  eval->add_option("--data", ev.data, "dataset manifest")->required();
  eval->add_option("--ckpt", ev.ckpt, "checkpoint directory");
  eval->add_option("--out", ev.out, "optional JSON report");
  eval->add_flag("--identity", ev.identity, "score the ground truth against itself");
  common(eval);

  GradCheckArgs gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--scope", gc.scope, "all, primitives or network");
  gradcheck->add_option("--step", gc.step, "network difference step");
  gradcheck->add_option("--tolerance", gc.tolerance, "relative tolerance");
  common(gradcheck);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  if (verbose) {
    json echo = echo_options(*sub);
    echo["options"]["seed"] = seed;
    out << echo.dump() << "\n";
  }
  try {
    if (sub == gen_stage) return cmd_gen_stage(gs, seed, out);
    if (sub == render) return cmd_render_olat(ro, out);
    if (sub == synth_env) return cmd_synth_env(se, seed, out);
    if (sub == project) return cmd_project_env(pe, out);
    if (sub == synth_pairs) return cmd_synth_pairs(sp, seed, out);
    if (sub == train) {
      tr.train.seed = seed;
      return cmd_train(tr, out);
    }
    if (sub == relight_cmd) return cmd_relight(rl, out);
    if (sub == retarget) return cmd_retarget(rt, out);
    if (sub == estimate) return cmd_estimate_light(el, out);
    if (sub == eval) return cmd_eval(ev, out);
    if (sub == gradcheck) return cmd_gradcheck(gc, seed, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const InvalidArgument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace relight
