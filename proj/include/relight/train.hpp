#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relight/adam.hpp"
#include "relight/autodiff.hpp"
#include "relight/datasynth.hpp"
#include "relight/prnet.hpp"

namespace relight {

inline constexpr double kLightLogFloor = -1.0 + 1e-6;

struct TrainConfig {
  double lambda_light = 0.8;
  double lambda_self = 1.0;
  double learning_rate = 1e-3;
  int batch_size = 1;
  int steps = 500;              // total optimizer steps, counted from step 0
  std::uint64_t seed = 0;       // parameter init and per-epoch shuffles
  int checkpoint_every = 0;     // 0 writes only the final checkpoint

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(std::string_view text);

// ---- Losses ----------------------------------------------------------------

// Sum over pixels and channels of |mask * (prediction - target)|. The mask is
// H x W x 1 (broadcast over channels) or matches the image shape.
template <typename T>
Var<T> loss_image(const Var<T>& prediction, const Tensor<T>& target, const Tensor<T>& mask);

// Sum over pixels and channels of (omega * (log1p(pred) - log1p(target)))^2,
// with omega the per-pixel solid angle of the light grid. Predicted values
// below kLightLogFloor are clamped and counted in *clamped.
template <typename T>
Var<T> loss_light(const Var<T>& prediction, const Tensor<T>& target, std::int64_t* clamped = nullptr);
// Same with explicit per-pixel weights (H x W).
template <typename T>
Var<T> loss_light(const Var<T>& prediction, const Tensor<T>& target, const Tensor<T>& omega,
                  std::int64_t* clamped = nullptr);

// Branch terms of one example. Invalid vars mark skipped branches.
template <typename T>
struct BranchLosses {
  Var<T> target, light, self;
};

// target + lambda_light * light + lambda_self * self, leaving out branches
// whose weight is zero.
template <typename T>
Var<T> combine_losses(const BranchLosses<T>& branches, const TrainConfig& config);

// Runs the three branches of one pair through `net` on its tape. The target
// branch decodes with the true target light; the self branch decodes with
// the predicted source light rolled by the pair's jitter and is compared with
// the jittered source image.
template <typename T>
BranchLosses<T> branch_losses(const PRNet<T>& net, const TrainingPair& pair, const TrainConfig& config,
                              std::int64_t* clamped = nullptr);

struct LossBreakdown {
  double total = 0, target = 0, light = 0, self = 0;
  std::int64_t clamped = 0;  // predicted light values hit by the log floor
};

// Losses averaged over the batch and the gradient of their total.
struct GradientResult {
  LossBreakdown loss;
  ParameterSet<float> grads;
};

GradientResult compute_gradients(const PRNetConfig& net_config, const ParameterSet<float>& params,
                                 std::span<const TrainingPair* const> batch, const TrainConfig& config);

// One forward and backward pass over the batch and one Adam update. Throws
// NumericError naming the offending branch when a loss is not finite.
LossBreakdown train_step(const PRNetConfig& net_config, ParameterSet<float>& params, AdamState<float>& state,
                         std::span<const TrainingPair* const> batch, const TrainConfig& config);

// Forward-only losses for one pair.
LossBreakdown evaluate_loss(const PRNetConfig& net_config, const ParameterSet<float>& params,
                            const TrainingPair& pair, const TrainConfig& config);

// ---- Driver ------------------------------------------------------------------

struct LogRow {
  std::int64_t step = 0;  // 1-based index of the update
  std::int64_t epoch = 0;
  LossBreakdown loss;
  double wall_ms = 0;
};

std::string log_header();
std::string log_line(const LogRow& row);

// Example order for one epoch: a Fisher-Yates shuffle seeded by (seed, epoch).
std::vector<int> epoch_order(int count, std::uint64_t seed, std::int64_t epoch);

struct FitOptions {
  PRNetConfig net;
  TrainConfig train;
  std::filesystem::path out_dir;            // receives checkpoint/ and train_log.csv
  std::optional<std::filesystem::path> resume;  // checkpoint directory to continue from
  std::function<void(const LogRow&)> on_step;
};

struct FitResult {
  ParameterSet<float> params;
  AdamState<float> optimizer;
  std::vector<LogRow> log;  // rows written by this call
};

// Trains for config.steps total updates. A resumed run continues from the
// step stored in the checkpoint and follows the same trajectory as an
// unbroken run.
FitResult fit(const std::vector<TrainingPair>& pairs, const FitOptions& options);

// ---- Metrics -----------------------------------------------------------------

struct ImageMetrics {
  double rmse = 0, rmse_s = 0, dssim = 0;
};

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double dynamic_range = 1.0;
};

// Metrics over pixels whose mask value is at least 0.5. RMSE-s rescales the
// prediction by the single least-squares factor over all masked samples.
// DSSIM = (1 - SSIM) / 2 with mask-weighted Gaussian windows, averaged over
// windows that touch the mask and then over channels.
ImageMetrics image_metrics(const Image& prediction, const Image& target, const Image& mask,
                           const SsimOptions& ssim = {});
double masked_rmse(const Image& prediction, const Image& target, const Image& mask);
double dssim(const Image& prediction, const Image& target, const Image& mask, const SsimOptions& options = {});

// min over alpha >= 0 of the solid-angle-weighted L2 norm of
// alpha * prediction - target.
double light_rmse_s(const Tensor<float>& prediction, const Tensor<float>& target);

struct ExampleMetrics {
  ImageMetrics target, source;
  double light_rmse_s = 0;
  double forward_ms = 0;
};

struct MetricsReport {
  std::vector<ExampleMetrics> examples;
  ExampleMetrics mean;  // arithmetic mean over examples
};

struct Prediction {
  Image target;        // relit under the true target light
  Image source;        // self reconstruction with zero rotation
  Tensor<float> light; // estimated source light
  double forward_ms = 0;
};

using Predictor = std::function<Prediction(const TrainingPair&)>;

Predictor network_predictor(const PRNetConfig& config, const ParameterSet<float>& params);
// Returns the ground truth of each pair.
Predictor identity_predictor();

MetricsReport evaluate(const std::vector<TrainingPair>& pairs, const Predictor& predictor);

std::string report_json(const MetricsReport& report, bool include_timing = true);
// Aligned text with target, source, light and time columns.
std::string report_table(const MetricsReport& report);

extern template Var<float> loss_image(const Var<float>&, const Tensor<float>&, const Tensor<float>&);
extern template Var<double> loss_image(const Var<double>&, const Tensor<double>&, const Tensor<double>&);
extern template Var<float> loss_light(const Var<float>&, const Tensor<float>&, std::int64_t*);
extern template Var<double> loss_light(const Var<double>&, const Tensor<double>&, std::int64_t*);
extern template Var<float> loss_light(const Var<float>&, const Tensor<float>&, const Tensor<float>&, std::int64_t*);
extern template Var<double> loss_light(const Var<double>&, const Tensor<double>&, const Tensor<double>&,
                                       std::int64_t*);
extern template Var<float> combine_losses(const BranchLosses<float>&, const TrainConfig&);
extern template Var<double> combine_losses(const BranchLosses<double>&, const TrainConfig&);
extern template BranchLosses<float> branch_losses(const PRNet<float>&, const TrainingPair&, const TrainConfig&,
                                                  std::int64_t*);
extern template BranchLosses<double> branch_losses(const PRNet<double>&, const TrainingPair&, const TrainConfig&,
                                                   std::int64_t*);

}  // namespace relight
