#include "h4d/parameters.hpp"

namespace h4d {

void ParameterSet::set(const std::string& name, Tensor value) { params_[name] = std::move(value); }

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterSet::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

ParameterSet ParameterSet::with_prefix(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& [name, t] : params_)
    if (name.rfind(prefix, 0) == 0) out.set(name, t);
  return out;
}

Binding::Binding(Tape& tape, const ParameterSet& params, Predicate trainable)
    : tape_(&tape), params_(&params), trainable_(std::move(trainable)) {}

Var Binding::operator[](const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Tensor& value = params_->get(name);
  Var v = trainable_(name) ? tape_->leaf(value) : tape_->constant(value);
  bound_.emplace(name, v);
  return v;
}

GradientMap Binding::gradients() const {
  GradientMap out;
  for (const auto& [name, t] : *params_) {
    if (!trainable_(name)) continue;
    auto it = bound_.find(name);
    out[name] = it == bound_.end() ? Tensor(t.shape()) : tape_->grad(it->second);
  }
  return out;
}

void init_uniform(Tensor& t, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : t.values()) v = dist(rng);
}

void init_normal(Tensor& t, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  for (float& v : t.values()) v = dist(rng);
}

}  // namespace h4d
