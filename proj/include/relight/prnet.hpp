#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "relight/autodiff.hpp"
#include "relight/tensor.hpp"

namespace relight {

// Encoder-decoder relighting network. Encoder stage i maps c[i-1] -> c[i]
// with a stride-1 conv (its output is the skip for stage i) and then halves
// the resolution with a stride-2 conv. The bottleneck is D / 2^stages.
struct PRNetConfig {
  int input_size = 64;
  std::vector<int> channels = {16, 32, 64, 128};
  int light_height = 8, light_width = 16;
  int groups = 8;               // group-norm groups, reduced to divide each width
  int kernel_size = 3;
  int light_encoder_width = 32; // hidden width of the target-light injection
  // One confidence per bottleneck location instead of one per light pixel.
  bool scalar_confidence = false;

  static PRNetConfig toy();
  static PRNetConfig full_scale();  // 256 input, 16 x 32 light
  static PRNetConfig grad_check();    // 16 input, 4 x 8 light

  int stages() const { return static_cast<int>(channels.size()); }
  int bottleneck_size() const { return input_size >> stages(); }
  int light_pixels() const { return light_height * light_width; }
  int confidence_channels() const { return scalar_confidence ? 1 : light_pixels(); }
  int groups_for(int width) const;
  void validate() const;

  friend bool operator==(const PRNetConfig&, const PRNetConfig&) = default;
};

std::string config_to_json(const PRNetConfig& config);
PRNetConfig config_from_json(std::string_view text);

// Kernels ~ N(0, 2 / fan_in) with fan_in = kh * kw * input channels, zero
// biases, group-norm gamma 1 and beta 0, PReLU slopes 0.25.
template <typename T>
ParameterSet<T> init_params(const PRNetConfig& config, std::uint64_t seed);

// Names and shapes of every parameter, in manifest order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const PRNetConfig& config);

template <typename T>
struct Encoding {
  std::vector<Var<T>> skips;  // one per stage, finest first
  Var<T> bottleneck;
};

template <typename T>
struct LightPrediction {
  Var<T> light;       // H_L x W_L x 3, unconstrained
  Var<T> confidence;  // Hb x Wb x P (or x 1), positive
};

template <typename T>
struct PRNetOutput {
  Var<T> image;  // D x D x 3 in (0, 1)
  LightPrediction<T> light;
};

// The network bound to parameter variables on one tape.
template <typename T>
class PRNet {
 public:
  // Records every parameter as a leaf of `tape`.
  PRNet(const PRNetConfig& config, Tape<T>& tape, const ParameterSet<T>& params, bool requires_grad);
  // Uses existing variables, in parameter_layout order.
  PRNet(const PRNetConfig& config, std::vector<Var<T>> params);

  const PRNetConfig& config() const { return config_; }
  const std::vector<Var<T>>& parameters() const { return vars_; }

  Encoding<T> encode(const Var<T>& image) const;
  LightPrediction<T> predict_light(const Var<T>& bottleneck) const;
  Var<T> decode(const Encoding<T>& encoding, const Var<T>& light) const;
  PRNetOutput<T> forward(const Var<T>& image, const Var<T>& target_light) const;

  // Gradients of the last backward pass, named like the parameters.
  ParameterSet<T> gradients() const;

 private:
  const Var<T>& param(const std::string& name) const;
  Var<T> conv_block(const Var<T>& x, const std::string& prefix, int stride, bool transpose) const;

  PRNetConfig config_;
  std::vector<std::string> names_;
  std::vector<Var<T>> vars_;
};

// Tape-free inference helpers.
struct Inference {
  Tensor<float> image;
  Tensor<float> light;
  Tensor<float> confidence;
};

Inference run_forward(const PRNetConfig& config, const ParameterSet<float>& params, const Tensor<float>& image,
                      const Tensor<float>& target_light);
// Encodes the image, predicts its light and confidence, and decodes with
// that light rolled by `theta_degrees` of longitude.
Inference run_retarget(const PRNetConfig& config, const ParameterSet<float>& params, const Tensor<float>& image,
                       double theta_degrees);
Inference run_estimate_light(const PRNetConfig& config, const ParameterSet<float>& params, const Tensor<float>& image);

extern template ParameterSet<float> init_params<float>(const PRNetConfig&, std::uint64_t);
extern template ParameterSet<double> init_params<double>(const PRNetConfig&, std::uint64_t);
extern template class PRNet<float>;
extern template class PRNet<double>;

}  // namespace relight
