#pragma once

// Central finite-difference oracle for tape gradients. Test-only; evaluates
// the loss through forward passes alone and never touches backward code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "h4d/autodiff.hpp"

namespace h4d::oracle {

using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double evaluate(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  return build(tape, vars).value().item();
}

inline std::vector<Tensor> analytic_gradients(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  Var loss = build(tape, vars);
  tape.backward(loss);
  std::vector<Tensor> out;
  for (Var v : vars) out.push_back(tape.grad(v));
  return out;
}

struct GradCheck {
  // max|a - n| over all probed entries, relative to the largest gradient
  // magnitude across all inputs.
  double max_rel_error = 0.0;
  std::size_t probes = 0;
};

// Probes at most `max_probes` entries per input (evenly strided).
inline GradCheck gradient_check(const LossBuilder& build, const std::vector<Tensor>& inputs, float step = 1e-3f,
                                std::size_t max_probes = 256, std::vector<bool> probe_mask = {}) {
  const std::vector<Tensor> analytic = analytic_gradients(build, inputs);
  GradCheck result;
  double max_diff = 0.0, max_mag = 1e-12;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!probe_mask.empty() && !probe_mask[i]) continue;
    const std::size_t n = inputs[i].size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_probes);
    for (std::size_t k = 0; k < n; k += stride) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[i][k] += step;
      minus[i][k] -= step;
      const double numeric = (evaluate(build, plus) - evaluate(build, minus)) / (2.0 * double(step));
      const double a = analytic[i][k];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_mag = std::max({max_mag, std::abs(a), std::abs(numeric)});
      ++result.probes;
    }
  }
  result.max_rel_error = max_diff / max_mag;
  return result;
}

}  // namespace h4d::oracle
