#pragma once

#include <cstdint>

#include "relight/tensor.hpp"

namespace relight {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Per-parameter moment estimates, shaped like the parameters they track.
template <typename T>
struct AdamState {
  AdamOptions options;
  ParameterSet<T> first_moment;
  ParameterSet<T> second_moment;
  std::int64_t step = 0;

  static AdamState zeros_like(const ParameterSet<T>& params, AdamOptions options = {});
};

// One bias-corrected Adam update of every tensor in params.
template <typename T>
void adam_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamState<T>& state);

extern template struct AdamState<float>;
extern template struct AdamState<double>;

}  // namespace relight
