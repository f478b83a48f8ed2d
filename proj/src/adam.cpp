#include "relight/adam.hpp"

#include <cmath>

#include "relight/error.hpp"

namespace relight {

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const ParameterSet<T>& params, AdamOptions options) {
  AdamState state;
  state.options = options;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.first_moment.add(params.name(i), Tensor<T>(params.tensor(i).shape()));
    state.second_moment.add(params.name(i), Tensor<T>(params.tensor(i).shape()));
  }
  return state;
}

template <typename T>
void adam_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamState<T>& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw InvalidArgument("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& shape = params.tensor(i).shape();
    if (grads.tensor(i).shape() != shape || state.first_moment.tensor(i).shape() != shape ||
        state.second_moment.tensor(i).shape() != shape) {
      throw InvalidArgument("adam_step: shape mismatch for " + params.name(i));
    }
  }
  const auto& opt = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(opt.beta1, t);
  const double correction2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.tensor(i);
    const auto& g = grads.tensor(i);
    auto& m = state.first_moment.tensor(i);
    auto& v = state.second_moment.tensor(i);
    for (std::int64_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = opt.beta1 * m[k] + (1.0 - opt.beta1) * gk;
      const double vk = opt.beta2 * v[k] + (1.0 - opt.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = mk / correction1;
      const double v_hat = vk / correction2;
      p[k] = static_cast<T>(p[k] - opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon));
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParameterSet<float>&, const ParameterSet<float>&, AdamState<float>&);
template void adam_step(ParameterSet<double>&, const ParameterSet<double>&, AdamState<double>&);

}  // namespace relight
