#pragma once

// Finite-difference check over named parameters. The loss is rebuilt from
// scratch on a fresh tape for every perturbed copy of the parameter set.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "h4d/parameters.hpp"

namespace h4d::oracle {

using ParamLoss = std::function<Var(Binding&)>;

struct ParamCheck {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t probes = 0;
};

inline double param_loss_value(const ParamLoss& build, const ParameterSet& params) {
  Tape tape;
  Binding b(tape, params, [](const std::string&) { return false; });
  return build(b).value().item();
}

// Probes up to `per_tensor` evenly strided entries of every parameter; errors
// are relative to the largest gradient magnitude seen anywhere.
inline ParamCheck param_gradient_check(const ParamLoss& build, const ParameterSet& params, float step = 1e-3f,
                                       std::size_t per_tensor = 4) {
  Tape tape;
  Binding bind(tape, params);
  tape.backward(build(bind));
  const GradientMap grads = bind.gradients();
  ParamCheck out;
  double max_diff = 0.0, max_mag = 1e-12;
  for (const auto& [name, value] : params) {
    const auto it = grads.find(name);
    const std::size_t n = value.size();
    const std::size_t stride = std::max<std::size_t>(1, n / per_tensor);
    for (std::size_t k = 0; k < n; k += stride) {
      ParameterSet plus = params, minus = params;
      plus.get(name)[k] += step;
      minus.get(name)[k] -= step;
      const double numeric = (param_loss_value(build, plus) - param_loss_value(build, minus)) / (2.0 * double(step));
      const double analytic = it == grads.end() ? 0.0 : double(it->second[k]);
      const double diff = std::abs(analytic - numeric);
      if (diff > max_diff) {
        max_diff = diff;
        out.worst = name + "[" + std::to_string(k) + "]";
      }
      max_mag = std::max({max_mag, std::abs(analytic), std::abs(numeric)});
      ++out.probes;
    }
  }
  out.max_rel_error = max_diff / max_mag;
  return out;
}

}  // namespace h4d::oracle
