#include "relight/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "relight/rng.hpp"

namespace relight {
namespace {

struct Evaluation {
  double loss = 0.0;
  std::vector<Tensor<double>> grads;
};

Evaluation evaluate(const GradCheckFn& fn, const std::vector<Tensor<double>>& inputs, std::uint64_t seed,
                    bool with_grad) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, with_grad));
  Var<double> out = fn(tape, vars);
  Var<double> loss = out;
  if (out.value().size() != 1) {
    Rng rng(seed);
    Tensor<double> projection(out.shape());
    for (auto& v : projection.storage()) v = rng.normal();
    loss = sum(mul(out, tape.constant(std::move(projection))));
  }
  Evaluation result;
  result.loss = loss.value().item();
  if (with_grad) {
    tape.backward(loss);
    for (const auto& v : vars) result.grads.push_back(tape.grad(v));
  }
  return result;
}

}  // namespace

GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options, const std::vector<std::string>& input_names) {
  GradCheckReport report;
  const Evaluation analytic = evaluate(fn, inputs, options.seed, true);
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::int64_t i = 0; i < probe[k].size(); ++i) {
      const double original = probe[k][i];
      const double a = analytic.grads[k][i];
      const auto relative = [&](double numeric) {
        return std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
      };
      double step = options.step, numeric = 0.0, rel = std::numeric_limits<double>::infinity();
      for (int attempt = 0;; ++attempt) {
        probe[k][i] = original + step;
        const double plus = evaluate(fn, probe, options.seed, false).loss;
        probe[k][i] = original - step;
        const double minus = evaluate(fn, probe, options.seed, false).loss;
        probe[k][i] = original;
        const double estimate = (plus - minus) / (2.0 * step);
        if (relative(estimate) < rel) numeric = estimate, rel = relative(estimate);
        if (rel <= options.tolerance || attempt == options.refinements) break;
        // Left and right slopes that disagree mean a kink inside the stencil;
        // a smaller step moves the stencil off it. Smooth mismatches stay.
        const double right = (plus - analytic.loss) / step, left = (analytic.loss - minus) / step;
        if (std::abs(right - left) <= options.tolerance * std::max({std::abs(right), std::abs(left), options.floor})) {
          break;
        }
        step /= 10.0;
        ++report.refined;
      }
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_location.empty()) {
        report.max_rel_error = std::max(rel, report.max_rel_error);
        if (rel >= report.max_rel_error) {
          report.analytic_at_worst = a;
          report.numeric_at_worst = numeric;
          const std::string name = k < input_names.size() ? input_names[k] : "input " + std::to_string(k);
          report.worst_location = name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace relight
