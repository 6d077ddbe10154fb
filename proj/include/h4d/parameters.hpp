#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>

#include "h4d/autodiff.hpp"

namespace h4d {

using GradientMap = std::map<std::string, Tensor>;

// Named parameter tensors, ordered by name so iteration (and therefore
// serialization and optimizer updates) is deterministic.
class ParameterSet {
 public:
  void set(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  // Total number of scalars across all tensors.
  std::size_t scalar_count() const;
  std::size_t size() const { return params_.size(); }
  ParameterSet with_prefix(const std::string& prefix) const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::map<std::string, Tensor> params_;
};

// Parameters bound onto a tape for one forward pass. Entries become tape
// leaves on first use; names selected by the trainable predicate receive
// gradients, the rest are recorded as constants.
class Binding {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  Binding(Tape& tape, const ParameterSet& params, Predicate trainable);
  Binding(Tape& tape, const ParameterSet& params) : Binding(tape, params, [](const std::string&) { return true; }) {}

  Var operator[](const std::string& name);
  Tape& tape() noexcept { return *tape_; }
  const ParameterSet& parameters() const noexcept { return *params_; }

  // Gradients for every trainable parameter (zeros for those never touched).
  GradientMap gradients() const;

 private:
  Tape* tape_;
  const ParameterSet* params_;
  Predicate trainable_;
  std::map<std::string, Var> bound_;
};

// Initializers used by every network in the library.
void init_uniform(Tensor& t, float bound, std::mt19937_64& rng);
void init_normal(Tensor& t, float stddev, std::mt19937_64& rng);

}  // namespace h4d
