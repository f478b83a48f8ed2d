#include "relight/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "relight/checkpoint.hpp"
#include "relight/envmap.hpp"
#include "relight/error.hpp"
#include "relight/rng.hpp"

namespace relight {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lambda_light >= 0) || !(lambda_self >= 0)) throw InvalidArgument("loss weights must be nonnegative");
  if (!(learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
  if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
  if (steps < 1) throw InvalidArgument("step budget must be at least 1");
  if (checkpoint_every < 0) throw InvalidArgument("checkpoint cadence must be nonnegative");
}

std::string train_config_to_json(const TrainConfig& c) {
  return json{{"lambda_light", c.lambda_light}, {"lambda_self", c.lambda_self}, {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},     {"steps", c.steps},             {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every}}
      .dump();
}

TrainConfig train_config_from_json(std::string_view text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    c.lambda_light = j.value("lambda_light", c.lambda_light);
    c.lambda_self = j.value("lambda_self", c.lambda_self);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const json::exception& e) {
    throw IoError(std::string("train config does not parse: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

template <typename T>
Tensor<T> expand_mask(const Tensor<T>& mask, const Shape& shape) {
  if (mask.rank() != 3 || mask.dim(0) != shape[0] || mask.dim(1) != shape[1] ||
      (mask.dim(2) != 1 && mask.dim(2) != shape[2])) {
    throw InvalidArgument("mask " + shape_string(mask.shape()) + " does not match image " + shape_string(shape));
  }
  for (T v : mask.values())
    if (!(v >= T(0) && v <= T(1))) throw InvalidArgument("mask values must lie in [0, 1]");
  if (mask.dim(2) == shape[2]) return mask;
  Tensor<T> out(shape);
  const int c = shape[2];
  for (std::int64_t i = 0; i < mask.size(); ++i)
    for (int k = 0; k < c; ++k) out[i * c + k] = mask[i];
  return out;
}

template <typename T>
Tensor<T> solid_angle_weights(int height, int width) {
  const SolidAngleMap omega(height, width);
  Tensor<T> out({height, width});
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) out[r * width + c] = static_cast<T>(omega.at(r, c));
  return out;
}

template <typename T>
Tensor<T> as(const Image& image) {
  if constexpr (std::is_same_v<T, float>) {
    return image;
  } else {
    return image.template cast<T>();
  }
}

}  // namespace

template <typename T>
Var<T> loss_image(const Var<T>& prediction, const Tensor<T>& target, const Tensor<T>& mask) {
  const Shape& shape = prediction.shape();
  if (shape != target.shape()) {
    throw InvalidArgument("loss_image: prediction " + shape_string(shape) + " vs target " +
                          shape_string(target.shape()));
  }
  if (shape.size() != 3) throw InvalidArgument("loss_image expects H x W x C images");
  Tape<T>& tape = prediction.tape();
  const Var<T> diff = sub(prediction, tape.constant(target));
  return sum(abs(mul(diff, tape.constant(expand_mask(mask, shape)))));
}

template <typename T>
Var<T> loss_light(const Var<T>& prediction, const Tensor<T>& target, std::int64_t* clamped) {
  if (prediction.shape().size() != 3) throw InvalidArgument("loss_light expects H x W x C lights");
  return loss_light(prediction, target, solid_angle_weights<T>(prediction.shape()[0], prediction.shape()[1]),
                    clamped);
}

template <typename T>
Var<T> loss_light(const Var<T>& prediction, const Tensor<T>& target, const Tensor<T>& omega, std::int64_t* clamped) {
  const Shape& shape = prediction.shape();
  if (shape != target.shape()) {
    throw InvalidArgument("loss_light: prediction " + shape_string(shape) + " vs target " +
                          shape_string(target.shape()));
  }
  if (shape.size() != 3 || omega.shape() != Shape{shape[0], shape[1]}) {
    throw InvalidArgument("loss_light: weights " + shape_string(omega.shape()) + " do not match light " +
                          shape_string(shape));
  }
  Tensor<T> log_target = target;
  for (auto& v : log_target.storage()) {
    if (!(v >= T(0))) throw InvalidArgument("loss_light: target light must be nonnegative");
    v = std::log1p(v);
  }
  Tensor<T> weights(shape);
  const int c = shape[2];
  for (std::int64_t i = 0; i < omega.size(); ++i)
    for (int k = 0; k < c; ++k) weights[i * c + k] = omega[i];
  Tape<T>& tape = prediction.tape();
  const Var<T> diff = sub(log1p_clamped(prediction, kLightLogFloor, clamped), tape.constant(log_target));
  return sum(square(mul(diff, tape.constant(weights))));
}

template <typename T>
Var<T> combine_losses(const BranchLosses<T>& b, const TrainConfig& config) {
  Var<T> total = b.target;
  if (config.lambda_light > 0) {
    if (!b.light.valid()) throw InvalidArgument("light loss weight is set but the light branch was not evaluated");
    total = add(total, scale(b.light, config.lambda_light));
  }
  if (config.lambda_self > 0) {
    if (!b.self.valid()) throw InvalidArgument("self loss weight is set but the self branch was not evaluated");
    total = add(total, scale(b.self, config.lambda_self));
  }
  return total;
}

template <typename T>
BranchLosses<T> branch_losses(const PRNet<T>& net, const TrainingPair& pair, const TrainConfig& config,
                              std::int64_t* clamped) {
  const PRNetConfig& nc = net.config();
  const Shape image_shape{nc.input_size, nc.input_size, 3};
  if (pair.source.shape() != image_shape || pair.target.shape() != image_shape) {
    throw InvalidArgument("pair images are " + shape_string(pair.source.shape()) + ", network expects " +
                          shape_string(image_shape));
  }
  Tape<T>& tape = net.parameters().front().tape();
  const Tensor<T> mask = as<T>(pair.mask);
  const Encoding<T> encoding = net.encode(tape.constant(as<T>(pair.source)));
  BranchLosses<T> out;
  out.target = loss_image(net.decode(encoding, tape.constant(as<T>(pair.target_light))), as<T>(pair.target), mask);
  if (config.lambda_light > 0 || config.lambda_self > 0) {
    const LightPrediction<T> light = net.predict_light(encoding.bottleneck);
    if (config.lambda_light > 0) out.light = loss_light(light.light, as<T>(pair.source_light), clamped);
    if (config.lambda_self > 0) {
      const Var<T> rolled = roll_columns(light.light, degrees_to_column_shift(pair.jitter, nc.light_width));
      out.self = loss_image(net.decode(encoding, rolled), as<T>(pair.source_jittered), mask);
    }
  }
  return out;
}

namespace {

struct BatchLoss {
  Var<float> total;
  LossBreakdown values;
};

BatchLoss batch_loss(const PRNet<float>& net, std::span<const TrainingPair* const> batch, const TrainConfig& config) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  BatchLoss out;
  for (const TrainingPair* pair : batch) {
    const BranchLosses<float> b = branch_losses(net, *pair, config, &out.values.clamped);
    const Var<float> total = scale(combine_losses(b, config), inv);
    out.total = out.total.valid() ? add(out.total, total) : total;
    out.values.target += b.target.value().item() * inv;
    if (b.light.valid()) out.values.light += b.light.value().item() * inv;
    if (b.self.valid()) out.values.self += b.self.value().item() * inv;
  }
  out.values.total = out.total.value().item();
  if (!std::isfinite(out.values.total)) {
    std::ostringstream msg;
    msg << "non-finite training loss: target " << out.values.target << ", light " << out.values.light << ", self "
        << out.values.self;
    throw NumericError(msg.str());
  }
  return out;
}

}  // namespace

GradientResult compute_gradients(const PRNetConfig& net_config, const ParameterSet<float>& params,
                                 std::span<const TrainingPair* const> batch, const TrainConfig& config) {
  Tape<float> tape;
  const PRNet<float> net(net_config, tape, params, true);
  const BatchLoss loss = batch_loss(net, batch, config);
  tape.backward(loss.total);
  return {loss.values, net.gradients()};
}

LossBreakdown train_step(const PRNetConfig& net_config, ParameterSet<float>& params, AdamState<float>& state,
                         std::span<const TrainingPair* const> batch, const TrainConfig& config) {
  GradientResult result = compute_gradients(net_config, params, batch, config);
  for (std::size_t i = 0; i < result.grads.size(); ++i) {
    if (!result.grads.tensor(i).all_finite()) {
      throw NumericError("non-finite gradient for parameter " + result.grads.name(i));
    }
  }
  adam_step(params, result.grads, state);
  return result.loss;
}

LossBreakdown evaluate_loss(const PRNetConfig& net_config, const ParameterSet<float>& params,
                            const TrainingPair& pair, const TrainConfig& config) {
  Tape<float> tape;
  const PRNet<float> net(net_config, tape, params, false);
  const TrainingPair* batch[] = {&pair};
  return batch_loss(net, batch, config).values;
}

std::string log_header() { return "step,epoch,loss_total,loss_target,loss_light,loss_self,wall_ms"; }

std::string log_line(const LogRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%lld,%.9g,%.9g,%.9g,%.9g,%.3f", static_cast<long long>(row.step),
                static_cast<long long>(row.epoch), row.loss.total, row.loss.target, row.loss.light, row.loss.self,
                row.wall_ms);
  return buf;
}

std::vector<int> epoch_order(int count, std::uint64_t seed, std::int64_t epoch) {
  std::vector<int> order(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng::stream(splitmix64(seed ^ 0x5348554646ull), static_cast<std::uint64_t>(epoch));
  for (int i = count - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return order;
}

namespace {

void write_checkpoint(const std::filesystem::path& dir, const FitOptions& options, const ParameterSet<float>& params,
                      const AdamState<float>& state, std::int64_t step) {
  Checkpoint ck;
  ck.config = options.net;
  ck.params = params;
  ck.optimizer = state;
  ck.training_state = json{{"step", step}, {"train", json::parse(train_config_to_json(options.train))}}.dump();
  save_checkpoint(dir, ck);
}

}  // namespace

FitResult fit(const std::vector<TrainingPair>& pairs, const FitOptions& options) {
  options.net.validate();
  options.train.validate();
  if (pairs.empty()) throw InvalidArgument("cannot train on an empty dataset");
  const TrainConfig& tc = options.train;

  FitResult result;
  std::int64_t start = 0;
  if (options.resume) {
    Checkpoint ck = load_checkpoint(*options.resume);
    if (!(ck.config == options.net)) throw InvalidArgument("resume checkpoint was trained with a different network config");
    if (!ck.optimizer) throw InvalidArgument("resume checkpoint has no optimizer state");
    try {
      start = json::parse(ck.training_state).at("step").get<std::int64_t>();
    } catch (const json::exception&) {
      throw IoError("resume checkpoint lacks its step count");
    }
    result.params = std::move(ck.params);
    result.optimizer = std::move(*ck.optimizer);
    result.optimizer.options.learning_rate = tc.learning_rate;
  } else {
    result.params = init_params<float>(options.net, tc.seed);
    result.optimizer = AdamState<float>::zeros_like(result.params, AdamOptions{tc.learning_rate});
  }

  const std::filesystem::path ck_dir = options.out_dir / "checkpoint";
  const std::filesystem::path log_path = options.out_dir / "train_log.csv";
  std::filesystem::create_directories(options.out_dir);
  std::ofstream log;
  if (options.resume && std::filesystem::exists(log_path)) {
    log.open(log_path, std::ios::app);
  } else {
    log.open(log_path, std::ios::trunc);
    log << log_header() << "\n";
  }
  if (!log) throw IoError("cannot write " + log_path.string());

  const int n = static_cast<int>(pairs.size());
  const int b = std::min(tc.batch_size, n);
  const std::int64_t per_epoch = (n + b - 1) / b;
  std::vector<int> order;
  std::int64_t order_epoch = -1;
  std::vector<const TrainingPair*> batch;
  for (std::int64_t step = start; step < tc.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t epoch = step / per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(n, tc.seed, epoch);
      order_epoch = epoch;
    }
    const std::int64_t first = (step % per_epoch) * b;
    batch.clear();
    for (std::int64_t i = first; i < std::min<std::int64_t>(first + b, n); ++i) {
      batch.push_back(&pairs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    }
    LogRow row;
    row.step = step + 1;
    row.epoch = epoch;
    row.loss = train_step(options.net, result.params, result.optimizer, batch, tc);
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log << log_line(row) << "\n";
    result.log.push_back(row);
    if (options.on_step) options.on_step(row);
    if (tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 && step + 1 < tc.steps) {
      write_checkpoint(ck_dir, options, result.params, result.optimizer, step + 1);
    }
  }
  log.flush();
  if (!log) throw IoError("write failed for " + log_path.string());
  write_checkpoint(ck_dir, options, result.params, result.optimizer, std::max<std::int64_t>(start, tc.steps));
  return result;
}

template Var<float> loss_image(const Var<float>&, const Tensor<float>&, const Tensor<float>&);
template Var<double> loss_image(const Var<double>&, const Tensor<double>&, const Tensor<double>&);
template Var<float> loss_light(const Var<float>&, const Tensor<float>&, std::int64_t*);
template Var<double> loss_light(const Var<double>&, const Tensor<double>&, std::int64_t*);
template Var<float> loss_light(const Var<float>&, const Tensor<float>&, const Tensor<float>&, std::int64_t*);
template Var<double> loss_light(const Var<double>&, const Tensor<double>&, const Tensor<double>&, std::int64_t*);
template Var<float> combine_losses(const BranchLosses<float>&, const TrainConfig&);
template Var<double> combine_losses(const BranchLosses<double>&, const TrainConfig&);
template BranchLosses<float> branch_losses(const PRNet<float>&, const TrainingPair&, const TrainConfig&,
                                           std::int64_t*);
template BranchLosses<double> branch_losses(const PRNet<double>&, const TrainingPair&, const TrainConfig&,
                                            std::int64_t*);

}  // namespace relight
