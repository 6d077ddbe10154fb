#include "h4d/adam.hpp"

#include <cmath>

namespace h4d {

void adam_update(std::span<float> param, std::span<const float> grad, AdamMoments& moments, std::size_t step,
                 const AdamOptions& o) {
  if (param.size() != grad.size() || moments.m.size() != param.size() || moments.v.size() != param.size()) {
    throw DimensionError("adam_update: parameter, gradient and moment sizes differ");
  }
  for (float g : grad) {
    if (!std::isfinite(g)) throw NumericError("adam_update: non-finite gradient");
  }
  const double t = double(step);
  const double c1 = 1.0 - std::pow(double(o.beta1), t);
  const double c2 = 1.0 - std::pow(double(o.beta2), t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = o.beta1 * double(moments.m[i]) + (1.0 - o.beta1) * g;
    const double v = o.beta2 * double(moments.v[i]) + (1.0 - o.beta2) * g * g;
    moments.m[i] = static_cast<float>(m);
    moments.v[i] = static_cast<float>(v);
    const double update = o.lr * (m / c1) / (std::sqrt(v / c2) + o.eps);
    param[i] = static_cast<float>(double(param[i]) - update);
  }
}

void Adam::step(ParameterSet& params, const GradientMap& grads) {
  // Validate everything first so a bad gradient leaves parameters untouched.
  for (const auto& [name, g] : grads) {
    require_same_shape(params.get(name), g, name.c_str());
    if (!g.all_finite()) throw NumericError("Adam: non-finite gradient for '" + name + "'");
  }
  ++step_;
  for (const auto& [name, g] : grads) {
    Tensor& p = params.get(name);
    auto [it, inserted] = state_.try_emplace(name);
    if (inserted) it->second = AdamMoments{Tensor(p.shape()), Tensor(p.shape())};
    adam_update(p.values(), g.values(), it->second, step_, options_);
  }
}

}  // namespace h4d
