#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "relight/autodiff.hpp"

namespace relight {

struct GradCheckOptions {
  double step = 1e-4;        // central-difference step h
  double tolerance = 1e-3;   // max allowed relative error
  // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  // derivatives that are zero up to round-off from dominating the report.
  double floor = 1e-6;
  std::uint64_t seed = 7;    // seeds the projection used for non-scalar outputs
  // Times an element may retry at a tenth of the step when its central
  // difference fails and its one-sided slopes disagree (a kink in the
  // stencil). The element keeps its best agreement over the steps tried.
  int refinements = 2;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::string worst_location;
  std::int64_t checked = 0;
  std::int64_t refined = 0;  // retries caused by kinks inside the stencil
  bool passed = true;
};

// Compares tape gradients with central differences for every element of
// every input. Non-scalar outputs are reduced with a fixed random projection.
using GradCheckFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options = {},
                           const std::vector<std::string>& input_names = {});

}  // namespace relight
