#include "relight/prnet.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "relight/error.hpp"
#include "relight/rng.hpp"

namespace relight {

using nlohmann::json;

namespace {

std::string enc(int i, const char* part) { return "enc" + std::to_string(i) + "." + part; }
std::string dec(int i, const char* part) { return "dec" + std::to_string(i) + "." + part; }

void add_block(std::vector<std::pair<std::string, Shape>>& layout, const std::string& prefix, int k, int cin, int cout,
               bool transpose) {
  layout.emplace_back(prefix + ".kernel", transpose ? Shape{k, k, cout, cin} : Shape{k, k, cin, cout});
  layout.emplace_back(prefix + ".bias", Shape{cout});
  layout.emplace_back(prefix + ".gamma", Shape{cout});
  layout.emplace_back(prefix + ".beta", Shape{cout});
  layout.emplace_back(prefix + ".alpha", Shape{cout});
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

PRNetConfig PRNetConfig::toy() { return PRNetConfig{}; }

PRNetConfig PRNetConfig::full_scale() {
  PRNetConfig c;
  c.input_size = 256;
  c.channels = {32, 64, 128, 256};
  c.light_height = 16;
  c.light_width = 32;
  c.light_encoder_width = 64;
  return c;
}

PRNetConfig PRNetConfig::grad_check() {
  PRNetConfig c;
  c.input_size = 16;
  c.channels = {4, 8};
  c.light_height = 4;
  c.light_width = 8;
  c.light_encoder_width = 8;
  return c;
}

int PRNetConfig::groups_for(int width) const {
  int g = std::max(1, std::min(groups, width));
  while (width % g != 0) --g;
  return g;
}

void PRNetConfig::validate() const {
  if (channels.empty()) throw InvalidArgument("network needs at least one encoder stage");
  for (int c : channels)
    if (c < 1) throw InvalidArgument("channel widths must be positive");
  if (stages() > 20 || input_size < 1 || input_size % (1 << stages()) != 0) {
    throw InvalidArgument("input size " + std::to_string(input_size) + " is not divisible by 2^" +
                          std::to_string(stages()));
  }
  if (light_height < 1 || light_width < 1) throw InvalidArgument("light resolution must be positive");
  if (groups < 1) throw InvalidArgument("group count must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw InvalidArgument("kernel size must be odd");
  if (light_encoder_width < 1) throw InvalidArgument("light encoder width must be positive");
}

std::string config_to_json(const PRNetConfig& c) {
  const json j = {{"input_size", c.input_size},
                  {"channels", c.channels},
                  {"light_height", c.light_height},
                  {"light_width", c.light_width},
                  {"groups", c.groups},
                  {"kernel_size", c.kernel_size},
                  {"light_encoder_width", c.light_encoder_width},
                  {"scalar_confidence", c.scalar_confidence}};
  return j.dump();
}

PRNetConfig config_from_json(std::string_view text) {
  PRNetConfig c;
  try {
    const json j = json::parse(text);
    c.input_size = j.at("input_size").get<int>();
    c.channels = j.at("channels").get<std::vector<int>>();
    c.light_height = j.at("light_height").get<int>();
    c.light_width = j.at("light_width").get<int>();
    c.groups = j.at("groups").get<int>();
    c.kernel_size = j.at("kernel_size").get<int>();
    c.light_encoder_width = j.at("light_encoder_width").get<int>();
    c.scalar_confidence = j.at("scalar_confidence").get<bool>();
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed network config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const PRNetConfig& config) {
  config.validate();
  const auto& ch = config.channels;
  const int k = config.kernel_size, s = config.stages(), p = config.light_pixels();
  const int e = config.light_encoder_width;
  std::vector<std::pair<std::string, Shape>> layout;
  int cin = 3;
  for (int i = 0; i < s; ++i) {
    add_block(layout, enc(i, "a"), k, cin, ch[static_cast<std::size_t>(i)], false);
    add_block(layout, enc(i, "b"), k, ch[static_cast<std::size_t>(i)], ch[static_cast<std::size_t>(i)], false);
    cin = ch[static_cast<std::size_t>(i)];
  }
  layout.emplace_back("light_head.kernel", Shape{1, 1, cin, 3 * p + config.confidence_channels()});
  layout.emplace_back("light_head.bias", Shape{3 * p + config.confidence_channels()});
  layout.emplace_back("inject0.kernel", Shape{1, 1, 3 * p, e});
  layout.emplace_back("inject0.bias", Shape{e});
  layout.emplace_back("inject0.alpha", Shape{e});
  layout.emplace_back("inject1.kernel", Shape{1, 1, e, e});
  layout.emplace_back("inject1.bias", Shape{e});
  layout.emplace_back("inject1.alpha", Shape{e});
  cin += e;
  for (int i = s - 1; i >= 0; --i) {
    const int out = ch[static_cast<std::size_t>(std::max(i - 1, 0))];
    add_block(layout, dec(i, "up"), k, cin, out, true);
    add_block(layout, dec(i, "fuse"), k, out + ch[static_cast<std::size_t>(i)], out, false);
    cin = out;
  }
  layout.emplace_back("out.kernel", Shape{1, 1, cin, 3});
  layout.emplace_back("out.bias", Shape{3});
  return layout;
}

template <typename T>
ParameterSet<T> init_params(const PRNetConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ParameterSet<T> params;
  for (auto& [name, shape] : parameter_layout(config)) {
    Tensor<T> t(shape);
    if (ends_with(name, ".kernel")) {
      const bool transpose = name.find(".up.") != std::string::npos;
      const int fan_in = shape[0] * shape[1] * (transpose ? shape[3] : shape[2]);
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& v : t.storage()) v = static_cast<T>(stddev * rng.normal());
    } else if (ends_with(name, ".gamma")) {
      t.fill(T(1));
    } else if (ends_with(name, ".alpha")) {
      t.fill(T(0.25));
    }
    params.add(name, std::move(t));
  }
  return params;
}

template <typename T>
PRNet<T>::PRNet(const PRNetConfig& config, Tape<T>& tape, const ParameterSet<T>& params, bool requires_grad)
    : config_(config) {
  const auto layout = parameter_layout(config);
  if (params.size() != layout.size()) {
    throw InvalidArgument("parameter set has " + std::to_string(params.size()) + " tensors, config needs " +
                          std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, shape] = layout[i];
    if (params.name(i) != name || params.tensor(i).shape() != shape) {
      throw InvalidArgument("parameter " + std::to_string(i) + " is '" + params.name(i) + "' " +
                            shape_string(params.tensor(i).shape()) + ", config expects '" + name + "' " +
                            shape_string(shape));
    }
    names_.push_back(name);
    vars_.push_back(tape.leaf(params.tensor(i), requires_grad));
  }
}

template <typename T>
PRNet<T>::PRNet(const PRNetConfig& config, std::vector<Var<T>> params) : config_(config), vars_(std::move(params)) {
  const auto layout = parameter_layout(config);
  if (vars_.size() != layout.size()) throw InvalidArgument("wrong number of parameter variables");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (vars_[i].shape() != layout[i].second) throw InvalidArgument("parameter variable '" + layout[i].first + "' has wrong shape");
    names_.push_back(layout[i].first);
  }
}

template <typename T>
const Var<T>& PRNet<T>::param(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw InvalidArgument("no parameter named " + name);
  return vars_[static_cast<std::size_t>(it - names_.begin())];
}

template <typename T>
Var<T> PRNet<T>::conv_block(const Var<T>& x, const std::string& prefix, int stride, bool transpose) const {
  const Var<T>& kernel = param(prefix + ".kernel");
  const Var<T>& bias = param(prefix + ".bias");
  Var<T> y = transpose ? conv2d_transpose(x, kernel, bias, stride) : conv2d(x, kernel, bias, stride);
  y = group_norm(y, config_.groups_for(y.shape()[2]), param(prefix + ".gamma"), param(prefix + ".beta"));
  return prelu(y, param(prefix + ".alpha"));
}

template <typename T>
Encoding<T> PRNet<T>::encode(const Var<T>& image) const {
  const int d = config_.input_size;
  if (image.shape() != Shape{d, d, 3}) {
    throw InvalidArgument("input image is " + shape_string(image.shape()) + ", network expects " +
                          shape_string({d, d, 3}));
  }
  Encoding<T> out;
  Var<T> x = image;
  for (int i = 0; i < config_.stages(); ++i) {
    x = conv_block(x, enc(i, "a"), 1, false);
    out.skips.push_back(x);
    x = conv_block(x, enc(i, "b"), 2, false);
  }
  out.bottleneck = x;
  return out;
}

template <typename T>
LightPrediction<T> PRNet<T>::predict_light(const Var<T>& bottleneck) const {
  const int p = config_.light_pixels();
  const Var<T> head = conv2d(bottleneck, param("light_head.kernel"), param("light_head.bias"), 1);
  const Var<T> values = slice_channels(head, 0, 3 * p);
  const Var<T> confidence = softplus(slice_channels(head, 3 * p, 3 * p + config_.confidence_channels()));
  const Var<T> light = weighted_average(values, confidence, p);
  return {reshape(light, {config_.light_height, config_.light_width, 3}), confidence};
}

template <typename T>
Var<T> PRNet<T>::decode(const Encoding<T>& encoding, const Var<T>& light) const {
  const Shape expected{config_.light_height, config_.light_width, 3};
  if (light.shape() != expected) {
    throw InvalidArgument("light is " + shape_string(light.shape()) + ", network expects " + shape_string(expected));
  }
  const int b = config_.bottleneck_size();
  Var<T> l = reshape(light, {1, 1, 3 * config_.light_pixels()});
  l = prelu(conv2d(l, param("inject0.kernel"), param("inject0.bias"), 1), param("inject0.alpha"));
  l = prelu(conv2d(l, param("inject1.kernel"), param("inject1.bias"), 1), param("inject1.alpha"));
  Var<T> x = concat_channels(encoding.bottleneck, broadcast_spatial(l, b, b));
  for (int i = config_.stages() - 1; i >= 0; --i) {
    x = conv_block(x, dec(i, "up"), 2, true);
    x = concat_channels(x, encoding.skips[static_cast<std::size_t>(i)]);
    x = conv_block(x, dec(i, "fuse"), 1, false);
  }
  return sigmoid(conv2d(x, param("out.kernel"), param("out.bias"), 1));
}

template <typename T>
PRNetOutput<T> PRNet<T>::forward(const Var<T>& image, const Var<T>& target_light) const {
  const Encoding<T> encoding = encode(image);
  LightPrediction<T> light = predict_light(encoding.bottleneck);
  return {decode(encoding, target_light), light};
}

template <typename T>
ParameterSet<T> PRNet<T>::gradients() const {
  ParameterSet<T> grads;
  for (std::size_t i = 0; i < vars_.size(); ++i) grads.add(names_[i], vars_[i].tape().grad(vars_[i]));
  return grads;
}

Inference run_forward(const PRNetConfig& config, const ParameterSet<float>& params, const Tensor<float>& image,
                      const Tensor<float>& target_light) {
  Tape<float> tape;
  const PRNet<float> net(config, tape, params, false);
  const auto out = net.forward(tape.constant(image), tape.constant(target_light));
  return {out.image.value(), out.light.light.value(), out.light.confidence.value()};
}

Inference run_retarget(const PRNetConfig& config, const ParameterSet<float>& params, const Tensor<float>& image,
                       double theta_degrees) {
  Tape<float> tape;
  const PRNet<float> net(config, tape, params, false);
  const auto encoding = net.encode(tape.constant(image));
  const auto light = net.predict_light(encoding.bottleneck);
  const Var<float> rotated = roll_columns(light.light, theta_degrees * config.light_width / 360.0);
  return {net.decode(encoding, rotated).value(), light.light.value(), light.confidence.value()};
}

Inference run_estimate_light(const PRNetConfig& config, const ParameterSet<float>& params, const Tensor<float>& image) {
  Tape<float> tape;
  const PRNet<float> net(config, tape, params, false);
  const auto light = net.predict_light(net.encode(tape.constant(image)).bottleneck);
  return {Tensor<float>(), light.light.value(), light.confidence.value()};
}

template ParameterSet<float> init_params<float>(const PRNetConfig&, std::uint64_t);
template ParameterSet<double> init_params<double>(const PRNetConfig&, std::uint64_t);
template class PRNet<float>;
template class PRNet<double>;

}  // namespace relight
