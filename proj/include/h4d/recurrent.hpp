#pragma once

// Gated recurrent units on the tape. Gate layout follows the common
// (reset, update, candidate) column-block order:
//   r  = σ(x·W_ir + b_ir + h·W_hr + b_hr)
//   z  = σ(x·W_iz + b_iz + h·W_hz + b_hz)
//   n  = tanh(x·W_in + b_in + r ⊙ (h·W_hn + b_hn))
//   h' = (1 − z) ⊙ n + z ⊙ h

#include <random>
#include <span>
#include <string>
#include <vector>

#include "h4d/parameters.hpp"

namespace h4d {

struct GateWeights {
  Var w_ih;  // [d_in, 3H]
  Var w_hh;  // [H, 3H]
  Var b_ih;  // [3H]
  Var b_hh;  // [3H]
};

// Fused recurrent update. `gx` is the precomputed input projection x·W_ih + b_ih.
Var gru_step(Var gx, Var h, Var w_hh, Var b_hh);

Var gru_cell(Var x, Var h, const GateWeights& w);

// Runs the layers bottom-up from zero initial states; returns top-layer outputs [L, H].
Var stacked_gru(Var seq, std::span<const GateWeights> layers);

// Parameter naming: <prefix>.l<k>.{w_ih,w_hh,b_ih,b_hh}
void init_gru(ParameterSet& params, const std::string& prefix, std::size_t input, std::size_t hidden,
              std::size_t layers, std::mt19937_64& rng);
std::vector<GateWeights> bind_gru(Binding& binding, const std::string& prefix, std::size_t layers);

}  // namespace h4d
