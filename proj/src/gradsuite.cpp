#include "relight/gradsuite.hpp"

#include <functional>

#include "relight/rng.hpp"
#include "relight/train.hpp"

namespace relight {

namespace {

Tensor<double> uniform(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

// Uniform values whose magnitude is at least `gap`, random sign.
Tensor<double> away_from_zero(const Shape& shape, Rng& rng, double gap = 0.05) {
  Tensor<double> t(shape);
  for (auto& v : t.storage()) v = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(gap, 1.0);
  return t;
}

using Fn = std::function<Var<double>(std::span<const Var<double>>)>;

}  // namespace

std::vector<NamedGradCheck> primitive_gradchecks(std::uint64_t seed, const GradCheckOptions& options) {
  Rng rng(seed);
  std::vector<NamedGradCheck> out;
  auto check = [&](std::string name, const Fn& fn, std::vector<Tensor<double>> inputs) {
    out.push_back({std::move(name), grad_check([&fn](Tape<double>&, std::span<const Var<double>> v) { return fn(v); },
                                               inputs, options)});
  };
  const Shape s{3, 4, 2};
  check("add", [](auto v) { return add(v[0], v[1]); }, {uniform(s, rng), uniform(s, rng)});
  check("sub", [](auto v) { return sub(v[0], v[1]); }, {uniform(s, rng), uniform(s, rng)});
  check("mul", [](auto v) { return mul(v[0], v[1]); }, {uniform(s, rng), uniform(s, rng)});
  check("scale", [](auto v) { return scale(v[0], -1.7); }, {uniform(s, rng)});
  check("abs", [](auto v) { return abs(v[0]); }, {away_from_zero(s, rng)});
  check("square", [](auto v) { return square(v[0]); }, {uniform(s, rng)});
  check("sum", [](auto v) { return sum(v[0]); }, {uniform(s, rng)});
  check("reshape", [](auto v) { return reshape(v[0], {4, 6}); }, {uniform(s, rng)});
  check("log1p_clamped", [](auto v) { return log1p_clamped(v[0], kLightLogFloor); }, {uniform(s, rng, -0.9, 2.0)});
  check("prelu", [](auto v) { return prelu(v[0], v[1]); }, {away_from_zero(s, rng), uniform({2}, rng)});
  check("softplus", [](auto v) { return softplus(v[0]); }, {uniform(s, rng, -4, 4)});
  check("sigmoid", [](auto v) { return sigmoid(v[0]); }, {uniform(s, rng, -4, 4)});
  for (int stride : {1, 2}) {
    check("conv2d/stride" + std::to_string(stride), [stride](auto v) { return conv2d(v[0], v[1], v[2], stride); },
          {uniform({5, 5, 2}, rng), uniform({3, 3, 2, 3}, rng), uniform({3}, rng)});
    check("conv2d_transpose/stride" + std::to_string(stride),
          [stride](auto v) { return conv2d_transpose(v[0], v[1], v[2], stride); },
          {uniform({3, 4, 2}, rng), uniform({3, 3, 3, 2}, rng), uniform({3}, rng)});
  }
  check("group_norm", [](auto v) { return group_norm(v[0], 2, v[1], v[2]); },
        {uniform({4, 4, 4}, rng), uniform({4}, rng), uniform({4}, rng)});
  check("concat_channels", [](auto v) { return concat_channels(v[0], v[1]); },
        {uniform({2, 3, 2}, rng), uniform({2, 3, 3}, rng)});
  check("slice_channels", [](auto v) { return slice_channels(v[0], 1, 4); }, {uniform({2, 3, 5}, rng)});
  check("broadcast_spatial", [](auto v) { return broadcast_spatial(v[0], 2, 3); }, {uniform({1, 1, 3}, rng)});
  for (int conf : {4, 1}) {
    check("weighted_average/conf" + std::to_string(conf),
          [](auto v) { return weighted_average(v[0], softplus(v[1]), 4); },
          {uniform({2, 3, 12}, rng), uniform({2, 3, conf}, rng)});
  }
  for (double shift : {2.0, 1.37, -3.6}) {
    check("roll_columns/" + std::to_string(shift), [shift](auto v) { return roll_columns(v[0], shift); },
          {uniform({2, 8, 3}, rng)});
  }
  {
    const Tensor<double> target = uniform({4, 8, 3}, rng, 0, 1);
    Tensor<double> pred = target;
    const Tensor<double> offset = away_from_zero(target.shape(), rng);
    for (std::int64_t i = 0; i < pred.size(); ++i) pred[i] += 0.5 * offset[i];
    const Tensor<double> mask = uniform({4, 8, 1}, rng, 0, 1);
    check("loss_image", [target, mask](auto v) { return loss_image(v[0], target, mask); }, {pred});
    check("loss_light", [target](auto v) { return loss_light(v[0], target); }, {pred});
  }
  return out;
}

std::vector<NamedGradCheck> network_gradchecks(std::uint64_t seed, const PRNetConfig& config, double step) {
  config.validate();
  const auto params = init_params<double>(config, seed);
  Rng rng(splitmix64(seed));
  const int d = config.input_size;
  const Shape image{d, d, 3}, light{config.light_height, config.light_width, 3};
  std::vector<Tensor<double>> inputs;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < params.size(); ++i) {
    inputs.push_back(params.tensor(i));
    names.push_back(params.name(i));
  }
  const std::size_t n = params.size();
  GradCheckOptions options;
  options.step = step;
  options.seed = seed;
  std::vector<NamedGradCheck> out;

  // Network output with respect to parameters, image and target light.
  std::vector<Tensor<double>> with_data = inputs;
  with_data.push_back(uniform(image, rng, 0, 1));
  with_data.push_back(uniform(light, rng, 0, 2));
  std::vector<std::string> data_names = names;
  data_names.push_back("image");
  data_names.push_back("target_light");
  const Tensor<double> image_weights = uniform(image, rng), light_weights = uniform(light, rng);
  auto projected = [&](Tape<double>& tape, std::span<const Var<double>> v) {
    const PRNet<double> net(config, std::vector<Var<double>>(v.begin(), v.begin() + n));
    const auto o = net.forward(v[n], v[n + 1]);
    return add(sum(mul(o.image, tape.constant(image_weights))), sum(mul(o.light.light, tape.constant(light_weights))));
  };
  double forward_scale = 0;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : with_data) vars.push_back(tape.constant(t));
    forward_scale = std::abs(projected(tape, vars).value().item());
  }
  // Both checks divide by the initial magnitude so that round-off on
  // structurally zero gradients stays below the relative-error floor.
  out.push_back({"network_forward",
                 grad_check([&](Tape<double>& tape,
                                std::span<const Var<double>> v) { return scale(projected(tape, v), 1.0 / forward_scale); },
                            with_data, options, data_names)});

  // Three-branch loss.
  TrainingPair pair;
  pair.source = uniform(image, rng, 0, 1).cast<float>();
  pair.target = uniform(image, rng, 0, 1).cast<float>();
  pair.source_jittered = uniform(image, rng, 0, 1).cast<float>();
  pair.source_light = uniform(light, rng, 0, 2).cast<float>();
  pair.source_light_jittered = pair.source_light;
  pair.target_light = uniform(light, rng, 0, 2).cast<float>();
  pair.mask = uniform({d, d, 1}, rng, 0, 1).cast<float>();
  pair.jitter = 45.0;
  const TrainConfig tc;
  auto total = [&](std::span<const Var<double>> v) {
    const PRNet<double> net(config, std::vector<Var<double>>(v.begin(), v.end()));
    return combine_losses(branch_losses(net, pair, tc), tc);
  };
  double initial = 0;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    initial = total(vars).value().item();
  }
  out.push_back({"training_loss",
                 grad_check([&](Tape<double>&, std::span<const Var<double>> v) { return scale(total(v), 1.0 / initial); },
                            inputs, options, names)});
  return out;
}

}  // namespace relight
