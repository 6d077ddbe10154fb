#pragma once

#include <map>
#include <span>
#include <string>

#include "h4d/parameters.hpp"

namespace h4d {

struct AdamOptions {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamMoments {
  Tensor m;
  Tensor v;
};

// One bias-corrected Adam update of a single tensor. `step` is the 1-based
// step index after incrementing. Throws NumericError on non-finite gradients.
void adam_update(std::span<float> param, std::span<const float> grad, AdamMoments& moments, std::size_t step,
                 const AdamOptions& options);

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // Updates every parameter that has an entry in `grads`. The step counter
  // advances once per call.
  void step(ParameterSet& params, const GradientMap& grads);

  void set_lr(float lr) noexcept { options_.lr = lr; }
  float lr() const noexcept { return options_.lr; }
  std::size_t steps() const noexcept { return step_; }
  const AdamMoments& moments(const std::string& name) const { return state_.at(name); }

 private:
  AdamOptions options_;
  std::size_t step_ = 0;
  std::map<std::string, AdamMoments> state_;
};

}  // namespace h4d
