#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "relight/checkpoint.hpp"
#include "relight/error.hpp"
#include "relight/gradcheck.hpp"
#include "relight/rng.hpp"
#include "relight/train.hpp"

using namespace relight;
namespace fs = std::filesystem;

namespace {

Image random_image(const Shape& shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Image t(shape);
  for (auto& v : t.storage()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

Image disc_mask(int size) {
  Image m({size, size, 1});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - size / 2.0, dy = y + 0.5 - size / 2.0;
      m.at(y, x, 0) = dx * dx + dy * dy < size * size * 0.16 ? 1.0f : 0.0f;
    }
  return m;
}

// Random pair with the shapes of `config`; the self branch jitter is 45 degrees.
TrainingPair random_pair(const PRNetConfig& config, std::uint64_t seed) {
  const int d = config.input_size;
  const Shape image{d, d, 3}, light{config.light_height, config.light_width, 3};
  TrainingPair p;
  p.source = random_image(image, seed);
  p.target = random_image(image, seed + 1);
  p.source_jittered = random_image(image, seed + 2);
  p.source_light = random_image(light, seed + 3, 0, 2);
  p.target_light = random_image(light, seed + 4, 0, 2);
  p.source_light_jittered = p.source_light;
  p.mask = disc_mask(d);
  p.jitter = 45.0;
  return p;
}

EnvMap sun_env(double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * std::numbers::pi / 180, el = elevation_deg * std::numbers::pi / 180;
  return make_sun_env(32, 64, {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)}, 50.0, 6.0,
                      0.3);
}

// Rendered toy pair: 64 x 64 images, 8 x 16 lights.
TrainingPair rendered_pair(std::uint64_t seed) {
  static const OlatSet olat = render_olat_synthetic(SceneProxy{}, make_stage(64), 96);
  SynthOptions o = SynthOptions::toy();
  o.projection_height = 32;
  o.projection_width = 64;
  o.jitter_max_degrees = 30;
  Rng rng(seed);
  return synth_pair(olat, sun_env(30, 40), sun_env(200, 20), rng, o);
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("relight_train_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

// ---- Losses ------------------------------------------------------------------

TEST(LossImage, HandSumAndTrivialCases) {
  Tape<double> tape;
  const Tensor<double> target({2, 2, 1}, {0.5, 0.5, 0.5, 0.5});
  const Tensor<double> pred({2, 2, 1}, {1.5, -0.5, 0.5, 2.5});
  const Tensor<double> ones({2, 2, 1}, 1.0), zeros({2, 2, 1}, 0.0);
  EXPECT_DOUBLE_EQ(loss_image(tape.constant(pred), target, ones).value().item(), 4.0);
  EXPECT_DOUBLE_EQ(loss_image(tape.constant(pred), target, zeros).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(loss_image(tape.constant(target), target, ones).value().item(), 0.0);
}

TEST(LossImage, SingleChannelMaskBroadcasts) {
  Tape<float> tape;
  const Image a = random_image({5, 6, 3}, 1), b = random_image({5, 6, 3}, 2), m = random_image({5, 6, 1}, 3);
  Image m3({5, 6, 3});
  for (std::int64_t i = 0; i < m3.size(); ++i) m3[i] = m[i / 3];
  EXPECT_EQ(loss_image(tape.constant(a), b, m).value().item(), loss_image(tape.constant(a), b, m3).value().item());
}

TEST(LossImage, RejectsBadShapesAndMasks) {
  Tape<float> tape;
  const Image a = random_image({4, 4, 3}, 1);
  EXPECT_THROW(loss_image(tape.constant(a), random_image({4, 5, 3}, 2), random_image({4, 4, 1}, 3)), InvalidArgument);
  EXPECT_THROW(loss_image(tape.constant(a), a, random_image({4, 5, 1}, 3)), InvalidArgument);
  EXPECT_THROW(loss_image(tape.constant(a), a, Image({4, 4, 1}, 1.5f)), InvalidArgument);
}

TEST(LossLight, SinglePixelClosedForm) {
  // A 2 x 4 grid has pixel solid angle (2 pi / 4)(cos 0 - cos(pi / 2)) = pi / 2.
  Tape<double> tape;
  Tensor<double> pred({2, 4, 1}, 0.0);
  pred[5] = std::numbers::e - 1.0;
  const Tensor<double> target({2, 4, 1}, 0.0);
  const double pi = std::numbers::pi;
  EXPECT_NEAR(loss_light(tape.constant(pred), target).value().item(), pi * pi / 4, 1e-12);
  EXPECT_NEAR(pi * pi / 4, 2.4674, 1e-4);
}

TEST(LossLight, IdenticalIsZeroAndWeightsEnterSquared) {
  Tape<double> tape;
  const Tensor<double> pred = random_image({4, 8, 3}, 4, -0.5, 2).cast<double>();
  const Tensor<double> target = random_image({4, 8, 3}, 5, 0, 2).cast<double>();
  const Tensor<double> omega = random_image({4, 8}, 6, 0.1, 1).cast<double>();
  Tensor<double> doubled = omega;
  for (auto& v : doubled.storage()) v *= 2;
  EXPECT_EQ(loss_light(tape.constant(target), target).value().item(), 0.0);
  const double a = loss_light(tape.constant(pred), target, omega).value().item();
  const double b = loss_light(tape.constant(pred), target, doubled).value().item();
  EXPECT_NEAR(b, 4 * a, 1e-12 * b);
}

TEST(LossLight, ClampsBelowLogDomainAndCounts) {
  Tape<double> tape;
  Tensor<double> pred({2, 4, 1}, 0.0);
  pred[0] = -2.0;
  pred[3] = -1.0;
  pred[6] = -0.5;
  std::int64_t clamped = 0;
  const auto loss = loss_light(tape.constant(pred), Tensor<double>({2, 4, 1}, 0.0), &clamped);
  EXPECT_EQ(clamped, 2);
  EXPECT_TRUE(std::isfinite(loss.value().item()));
  EXPECT_THROW(loss_light(tape.constant(pred), Tensor<double>({2, 4, 1}, -1.0)), InvalidArgument);
  EXPECT_THROW(loss_light(tape.constant(pred), Tensor<double>({2, 5, 1}, 0.0)), InvalidArgument);
}

TEST(LossGradients, PassFiniteDifferences) {
  const Tensor<double> target = random_image({4, 8, 3}, 7, 0, 1).cast<double>();
  // Offsets keep every difference away from the |x| kink.
  Tensor<double> pred = target;
  Rng rng(8);
  for (auto& v : pred.storage()) v += (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.05, 0.5);
  const Tensor<double> mask = random_image({4, 8, 1}, 9).cast<double>();
  const auto image_report = grad_check(
      [&](Tape<double>&, std::span<const Var<double>> v) { return loss_image(v[0], target, mask); }, {pred});
  EXPECT_TRUE(image_report.passed) << image_report.max_rel_error;
  const auto light_report = grad_check(
      [&](Tape<double>&, std::span<const Var<double>> v) { return loss_light(v[0], target); }, {pred});
  EXPECT_TRUE(light_report.passed) << light_report.max_rel_error;
}

TEST(CombineLosses, LinearCombinationOfBranches) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> tape;
    const double a = rng.uniform(0, 100), b = rng.uniform(0, 100), c = rng.uniform(0, 100);
    const BranchLosses<double> br{tape.constant(Tensor<double>::scalar(a)), tape.constant(Tensor<double>::scalar(b)),
                                  tape.constant(Tensor<double>::scalar(c))};
    const TrainConfig config;
    EXPECT_NEAR(combine_losses(br, config).value().item(), a + 0.8 * b + c, 1e-7);
    TrainConfig ablated;
    ablated.lambda_light = 0;
    EXPECT_EQ(combine_losses(br, ablated).value().item(), a + c);
    ablated.lambda_self = 0;
    EXPECT_EQ(combine_losses(br, ablated).value().item(), a);
  }
}

TEST(CombineLosses, MissingBranchWithWeightThrows) {
  Tape<double> tape;
  BranchLosses<double> br;
  br.target = tape.constant(Tensor<double>::scalar(1.0));
  EXPECT_THROW(combine_losses(br, TrainConfig{}), InvalidArgument);
}

TEST(BranchLosses, AblationEqualsTargetImageLoss) {
  const PRNetConfig config = PRNetConfig::grad_check();
  const auto params = init_params<double>(config, 1);
  const TrainingPair pair = random_pair(config, 20);
  TrainConfig ablated;
  ablated.lambda_light = ablated.lambda_self = 0;
  Tape<double> tape;
  const PRNet<double> net(config, tape, params, false);
  const auto br = branch_losses(net, pair, ablated);
  EXPECT_FALSE(br.light.valid());
  EXPECT_FALSE(br.self.valid());
  const auto direct = net.forward(tape.constant(pair.source.cast<double>()), tape.constant(pair.target_light.cast<double>()));
  const double expected = loss_image(direct.image, pair.target.cast<double>(), pair.mask.cast<double>()).value().item();
  EXPECT_EQ(combine_losses(br, ablated).value().item(), expected);
}

TEST(BranchLosses, SelfBranchUsesRotatedPredictedLight) {
  // Rolling a light map by the jitter matches rotating it as an environment.
  const Image light = random_image({8, 16, 3}, 21);
  Tape<float> tape;
  for (double deg : {0.0, 22.5, 45.0, 100.0, 359.0}) {
    const Image rolled = roll_columns(tape.constant(light), degrees_to_column_shift(deg, 16)).value();
    EXPECT_EQ(rolled, rotate_longitude(EnvMap(light), deg).radiance()) << deg;
  }
}

TEST(TotalLoss, GradientPassesFiniteDifferences) {
  const PRNetConfig config = PRNetConfig::grad_check();
  const auto params = init_params<double>(config, 2);
  const TrainingPair pair = random_pair(config, 30);
  std::vector<Tensor<double>> inputs;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < params.size(); ++i) {
    inputs.push_back(params.tensor(i));
    names.push_back(params.name(i));
  }
  auto total = [&](std::span<const Var<double>> vars) {
    const PRNet<double> net(config, std::vector<Var<double>>(vars.begin(), vars.end()));
    return combine_losses(branch_losses(net, pair, TrainConfig{}), TrainConfig{});
  };
  // The summed loss is in the hundreds; dividing by its initial value keeps
  // difference round-off on exactly-zero gradients below the floor.
  double initial = 0;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    initial = total(vars).value().item();
  }
  GradCheckOptions options;
  options.step = 1e-5;
  const auto report = grad_check(
      [&](Tape<double>&, std::span<const Var<double>> vars) { return scale(total(vars), 1.0 / initial); },
      inputs, options, names);
  EXPECT_TRUE(report.passed) << "max rel error " << report.max_rel_error << " at " << report.worst_location
                             << " analytic " << report.analytic_at_worst << " numeric " << report.numeric_at_worst;
}

// ---- Training ----------------------------------------------------------------

TEST(TrainStep, DeterministicFromIdenticalState) {
  const PRNetConfig config = PRNetConfig::grad_check();
  const TrainingPair pair = random_pair(config, 40);
  const TrainingPair* batch[] = {&pair};
  auto p1 = init_params<float>(config, 3), p2 = p1;
  auto s1 = AdamState<float>::zeros_like(p1), s2 = s1;
  const auto l1 = train_step(config, p1, s1, batch, TrainConfig{});
  const auto l2 = train_step(config, p2, s2, batch, TrainConfig{});
  EXPECT_EQ(l1.total, l2.total);
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(s1.first_moment, s2.first_moment);
  EXPECT_NE(p1, init_params<float>(config, 3));
  EXPECT_NEAR(l1.total, l1.target + 0.8 * l1.light + l1.self, 1e-4 * l1.total);
}

TEST(TrainStep, SelfAblationIgnoresJitteredSourceAndRunsFaster) {
  const PRNetConfig config = PRNetConfig::toy();
  TrainingPair a = random_pair(config, 50);
  TrainingPair b = a;
  b.source_jittered = random_image({64, 64, 3}, 99);
  const auto params = init_params<float>(config, 4);
  TrainConfig ablated;
  ablated.lambda_self = 0;
  const TrainingPair* ba[] = {&a};
  const TrainingPair* bb[] = {&b};
  EXPECT_EQ(compute_gradients(config, params, ba, ablated).grads, compute_gradients(config, params, bb, ablated).grads);
  EXPECT_NE(compute_gradients(config, params, ba, TrainConfig{}).grads,
            compute_gradients(config, params, bb, TrainConfig{}).grads);

  auto best_ms = [&](const TrainConfig& c) {
    double best = 1e30;
    for (int i = 0; i < 3; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      compute_gradients(config, params, ba, c);
      best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  EXPECT_LT(best_ms(ablated), best_ms(TrainConfig{}));
}

TEST(TrainStep, OverfitsOnePairIn200Steps) {
  const PRNetConfig config = PRNetConfig::toy();
  const TrainingPair pair = rendered_pair(1);
  const TrainingPair* batch[] = {&pair};
  auto params = init_params<float>(config, 5);
  auto state = AdamState<float>::zeros_like(params, AdamOptions{1e-3});
  const TrainConfig tc;
  const double initial = evaluate_loss(config, params, pair, tc).total;
  for (int step = 0; step < 200; ++step) train_step(config, params, state, batch, tc);
  const double final_loss = evaluate_loss(config, params, pair, tc).total;
  EXPECT_LT(final_loss, 0.25 * initial) << "initial " << initial << " final " << final_loss;
}

TEST(TrainConfig, ValidatesAndRoundTrips) {
  TrainConfig c;
  c.lambda_light = 0.3;
  c.steps = 17;
  c.seed = 123456789012345ull;
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(back.lambda_light, 0.3);
  EXPECT_EQ(back.steps, 17);
  EXPECT_EQ(back.seed, c.seed);
  c.lambda_self = -1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = TrainConfig{};
  c.steps = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(EpochOrder, DeterministicPermutationPerEpoch) {
  const auto a = epoch_order(10, 3, 0);
  EXPECT_EQ(a, epoch_order(10, 3, 0));
  EXPECT_NE(a, epoch_order(10, 3, 1));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

namespace {

std::vector<TrainingPair> small_dataset(const PRNetConfig& config) {
  return {random_pair(config, 60), random_pair(config, 70), random_pair(config, 80)};
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST(Fit, SingleStepBudget) {
  FitOptions o;
  o.net = PRNetConfig::grad_check();
  o.train.steps = 1;
  o.out_dir = scratch_dir("one");
  const auto pairs = small_dataset(o.net);
  const auto result = fit(pairs, o);
  EXPECT_EQ(result.log.size(), 1u);
  EXPECT_EQ(result.optimizer.step, 1);
  EXPECT_EQ(count_lines(o.out_dir / "train_log.csv"), 2);
  const Checkpoint ck = load_checkpoint(o.out_dir / "checkpoint");
  EXPECT_EQ(ck.params, result.params);
  fs::remove_all(o.out_dir);
}

TEST(Fit, EmptyDatasetWritesNothing) {
  FitOptions o;
  o.net = PRNetConfig::grad_check();
  o.out_dir = scratch_dir("empty");
  EXPECT_THROW(fit({}, o), InvalidArgument);
  EXPECT_FALSE(fs::exists(o.out_dir / "checkpoint"));
}

TEST(Fit, ResumeReproducesUnbrokenRun) {
  FitOptions o;
  o.net = PRNetConfig::grad_check();
  o.train.steps = 7;
  o.train.batch_size = 2;
  o.train.seed = 11;
  const auto pairs = small_dataset(o.net);
  o.out_dir = scratch_dir("unbroken");
  const auto unbroken = fit(pairs, o);

  FitOptions first = o;
  first.out_dir = scratch_dir("resumed");
  first.train.steps = 3;
  fit(pairs, first);
  FitOptions second = o;
  second.out_dir = first.out_dir;
  second.resume = first.out_dir / "checkpoint";
  const auto resumed = fit(pairs, second);
  EXPECT_EQ(resumed.params, unbroken.params);
  EXPECT_EQ(resumed.optimizer.second_moment, unbroken.optimizer.second_moment);
  EXPECT_EQ(resumed.optimizer.step, 7);
  ASSERT_EQ(resumed.log.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(resumed.log[i].loss.total, unbroken.log[i + 3].loss.total);
  EXPECT_EQ(count_lines(first.out_dir / "train_log.csv"), 8);
  fs::remove_all(o.out_dir);
  fs::remove_all(first.out_dir);
}

TEST(Fit, ResumeRejectsDifferentConfig) {
  FitOptions o;
  o.net = PRNetConfig::grad_check();
  o.train.steps = 1;
  o.out_dir = scratch_dir("mismatch");
  const auto pairs = small_dataset(o.net);
  fit(pairs, o);
  FitOptions other = o;
  other.net.light_encoder_width = 4;
  other.resume = o.out_dir / "checkpoint";
  EXPECT_THROW(fit(pairs, other), InvalidArgument);
  fs::remove_all(o.out_dir);
}

// ---- Metrics -----------------------------------------------------------------

namespace {

// Direct windowed SSIM: for every center, mask-weighted Gaussian statistics
// over the clipped 11 x 11 neighbourhood with two-pass variances.
double reference_dssim(const Image& p, const Image& t, const Image& mask) {
  const int h = t.dim(0), w = t.dim(1), c = t.dim(2);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (int k = 0; k < c; ++k) {
    double sum = 0;
    int windows = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double wsum = 0, mx = 0, my = 0;
        for (int dy = -5; dy <= 5; ++dy)
          for (int dx = -5; dx <= 5; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w || mask.at(yy, xx, 0) < 0.5f) continue;
            const double g = std::exp(-(dx * dx + dy * dy) / (2 * 1.5 * 1.5));
            wsum += g;
            mx += g * p.at(yy, xx, k);
            my += g * t.at(yy, xx, k);
          }
        if (wsum == 0) continue;
        mx /= wsum;
        my /= wsum;
        double vx = 0, vy = 0, cxy = 0;
        for (int dy = -5; dy <= 5; ++dy)
          for (int dx = -5; dx <= 5; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w || mask.at(yy, xx, 0) < 0.5f) continue;
            const double g = std::exp(-(dx * dx + dy * dy) / (2 * 1.5 * 1.5)) / wsum;
            const double a = p.at(yy, xx, k) - mx, b = t.at(yy, xx, k) - my;
            vx += g * a * a;
            vy += g * b * b;
            cxy += g * a * b;
          }
        sum += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++windows;
      }
    total += sum / windows;
  }
  return (1 - total / c) / 2;
}

}  // namespace

TEST(ImageMetrics, IdentityIsZero) {
  const Image a = random_image({12, 12, 3}, 1);
  const auto m = image_metrics(a, a, disc_mask(12));
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.rmse_s, 0.0);
  EXPECT_NEAR(m.dssim, 0.0, 1e-15);
}

TEST(ImageMetrics, DoubledPredictionHasZeroScaledError) {
  const Image t = random_image({12, 12, 3}, 2);
  Image p = t;
  for (auto& v : p.storage()) v *= 2;
  const auto m = image_metrics(p, t, disc_mask(12));
  EXPECT_GT(m.rmse, 0.1);
  EXPECT_NEAR(m.rmse_s, 0.0, 1e-7);
}

TEST(ImageMetrics, MatchDefinitionalReimplementation) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image p = random_image({8, 8, 3}, 100 + seed), t = random_image({8, 8, 3}, 200 + seed);
    Image mask = random_image({8, 8, 1}, 300 + seed);
    const auto m = image_metrics(p, t, mask);
    double se = 0, pt = 0, pp = 0;
    int n = 0;
    for (int i = 0; i < 64; ++i) {
      if (mask[i] < 0.5f) continue;
      for (int k = 0; k < 3; ++k) {
        se += std::pow(p[i * 3 + k] - t[i * 3 + k], 2);
        pt += static_cast<double>(p[i * 3 + k]) * t[i * 3 + k];
        pp += static_cast<double>(p[i * 3 + k]) * p[i * 3 + k];
        ++n;
      }
    }
    const double alpha = pt / pp;
    double se_s = 0;
    for (int i = 0; i < 64; ++i) {
      if (mask[i] < 0.5f) continue;
      for (int k = 0; k < 3; ++k) se_s += std::pow(alpha * p[i * 3 + k] - t[i * 3 + k], 2);
    }
    EXPECT_NEAR(m.rmse, std::sqrt(se / n), 1e-6);
    EXPECT_NEAR(m.rmse_s, std::sqrt(se_s / n), 1e-6);
    EXPECT_NEAR(m.dssim, reference_dssim(p, t, mask), 1e-6);
    EXPECT_NEAR(dssim(p, t, Image({8, 8, 1}, 1.0f)), reference_dssim(p, t, Image({8, 8, 1}, 1.0f)), 1e-6);
  }
}

TEST(ImageMetrics, ScaledErrorIsOptimalAndScaleFree) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Image p = random_image({10, 10, 3}, 400 + trial), t = random_image({10, 10, 3}, 900 + trial);
    const Image mask = random_image({10, 10, 1}, 1400 + trial);
    const auto m = image_metrics(p, t, mask);
    EXPECT_LE(m.rmse_s, m.rmse);
    EXPECT_GE(m.dssim, 0.0);
    EXPECT_LE(m.dssim, 1.0);
    Image scaled = p;
    const float c = static_cast<float>(rng.uniform(0.1, 10));
    for (auto& v : scaled.storage()) v *= c;
    EXPECT_NEAR(image_metrics(scaled, t, mask).rmse_s, m.rmse_s, 1e-6);
  }
}

TEST(ImageMetrics, DssimOfScaledCopiesIsZero) {
  const Image a = random_image({16, 16, 3}, 6);
  for (float c : {0.25f, 1.0f, 3.0f}) {
    Image s = a;
    for (auto& v : s.storage()) v *= c;
    EXPECT_NEAR(dssim(s, s, disc_mask(16)), 0.0, 1e-12);
  }
}

TEST(ImageMetrics, EmptyMaskAndShapeErrors) {
  const Image a = random_image({8, 8, 3}, 7);
  EXPECT_THROW(image_metrics(a, a, Image({8, 8, 1}, 0.2f)), InvalidArgument);
  EXPECT_THROW(image_metrics(a, random_image({8, 9, 3}, 8), Image({8, 8, 1}, 1.0f)), InvalidArgument);
}

TEST(LightRmseS, ScaleFamilyIsZero) {
  const Image l = random_image({8, 16, 3}, 9, 0, 3);
  for (float c : {0.1f, 1.0f, 7.0f}) {
    Image s = l;
    for (auto& v : s.storage()) v *= c;
    EXPECT_NEAR(light_rmse_s(s, l), 0.0, 1e-6);
  }
}

TEST(LightRmseS, OrthogonalAndZeroPredictionsGiveTargetNorm) {
  // Disjoint supports are orthogonal under the weighted inner product.
  Image target({8, 16, 3}, 0.0f), pred({8, 16, 3}, 0.0f);
  const Image r = random_image({8, 16, 3}, 10, 0.1, 2);
  for (std::int64_t i = 0; i < target.size(); ++i) ((i / 3) % 2 == 0 ? target : pred)[i] = r[i];
  const SolidAngleMap omega(8, 16);
  double norm = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 16; ++x)
      for (int k = 0; k < 3; ++k) norm += std::pow(omega.at(y, x) * target.at(y, x, k), 2);
  norm = std::sqrt(norm);
  EXPECT_NEAR(light_rmse_s(pred, target), norm, 1e-6);
  EXPECT_NEAR(light_rmse_s(Image({8, 16, 3}, 0.0f), target), norm, 1e-6);
  // Anti-correlated prediction: alpha clamps to zero.
  Image neg = target;
  for (auto& v : neg.storage()) v = -v;
  EXPECT_NEAR(light_rmse_s(neg, target), norm, 1e-6);
}

TEST(LightRmseS, InvariantUnderWholePixelRotation) {
  const Image p = random_image({8, 16, 3}, 11, 0, 2), t = random_image({8, 16, 3}, 12, 0, 2);
  const double base = light_rmse_s(p, t);
  for (int shift : {1, 5, 15}) {
    const Image rp = rotate_longitude(EnvMap(p), shift * 22.5).radiance();
    const Image rt = rotate_longitude(EnvMap(t), shift * 22.5).radiance();
    EXPECT_NEAR(light_rmse_s(rp, rt), base, 1e-9);
  }
}

// ---- Evaluation ----------------------------------------------------------------

TEST(Evaluate, IdentityPredictorGivesZeroImageMetrics) {
  const PRNetConfig config = PRNetConfig::grad_check();
  const auto pairs = small_dataset(config);
  const auto report = evaluate(pairs, identity_predictor());
  ASSERT_EQ(report.examples.size(), 3u);
  for (const auto& e : report.examples) {
    EXPECT_EQ(e.target.rmse, 0.0);
    EXPECT_EQ(e.source.rmse, 0.0);
    EXPECT_NEAR(e.target.dssim, 0.0, 1e-15);
    EXPECT_NEAR(e.light_rmse_s, 0.0, 1e-6);
  }
  EXPECT_THROW(evaluate({}, identity_predictor()), InvalidArgument);
}

TEST(Evaluate, MeansAndDeterminism) {
  const PRNetConfig config = PRNetConfig::grad_check();
  const auto pairs = small_dataset(config);
  const auto params = init_params<float>(config, 8);
  const auto a = evaluate(pairs, network_predictor(config, params));
  const auto b = evaluate(pairs, network_predictor(config, params));
  EXPECT_EQ(report_json(a, false), report_json(b, false));
  double target_rmse = 0, source_dssim = 0, light = 0;
  for (const auto& e : a.examples) {
    target_rmse += e.target.rmse;
    source_dssim += e.source.dssim;
    light += e.light_rmse_s;
    EXPECT_LE(e.target.rmse_s, e.target.rmse);
    EXPECT_LE(e.source.rmse_s, e.source.rmse);
  }
  EXPECT_NEAR(a.mean.target.rmse, target_rmse / 3, 1e-12);
  EXPECT_NEAR(a.mean.source.dssim, source_dssim / 3, 1e-12);
  EXPECT_NEAR(a.mean.light_rmse_s, light / 3, 1e-12);
  const std::string table = report_table(a);
  for (const char* col : {"Target", "Source", "RMSE-s", "DSSIM", "mean"}) EXPECT_NE(table.find(col), std::string::npos);
}

TEST(Evaluate, SourcePredictionIsTheSelfBranchDecodeWithoutJitter) {
  const PRNetConfig config = PRNetConfig::toy();
  const auto params = init_params<float>(config, 9);
  TrainingPair pair = random_pair(config, 90);
  const Prediction p = network_predictor(config, params)(pair);
  Tape<float> tape;
  const PRNet<float> net(config, tape, params, false);
  const auto enc = net.encode(tape.constant(pair.source));
  const auto light = net.predict_light(enc.bottleneck);
  EXPECT_EQ(p.source, net.decode(enc, roll_columns(light.light, 0.0)).value());
  EXPECT_EQ(p.light, light.light.value());
}
