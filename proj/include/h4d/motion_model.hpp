#pragma once

// Linear motion model: PCA over per-frame pose deltas from the first frame,
// fitted separately for the root orientation and for the remaining joints.

#include <span>
#include <utility>
#include <vector>

#include "h4d/archive.hpp"
#include "h4d/autodiff.hpp"

namespace h4d {

struct PcaFit {
  Tensor mean;                  // [D]
  Tensor components;            // [D,m], orthonormal columns
  Tensor eigenvalues;           // [m], nonincreasing
  std::size_t m = 0;
  std::vector<double> spectrum;  // every covariance eigenvalue, nonincreasing
};

// Q(m): fraction of the total variance carried by the first m eigenvalues.
double variance_fraction(std::span<const double> spectrum, std::size_t m);
// Smallest m with Q(m) > q. For q = 1 (no m can exceed it) returns the
// numerical rank instead, so the basis is complete.
std::size_t select_components(std::span<const double> spectrum, double q);

// rows: [N,D], N >= 2, q in (0,1].
PcaFit fit_pca(const Tensor& rows, double q_target);

struct DeltaRows {
  Tensor global;  // [N, 3(L-1)]
  Tensor body;    // [N, 3(J-1)(L-1)]
};

// Each sequence is [L,3J] axis-angles; joint 0 is the root.
DeltaRows build_delta_matrix(std::span<const Tensor> pose_seqs);

struct MotionBasis {
  Tensor mean_global, comps_global, eig_global;
  Tensor mean_body, comps_body, eig_body;
  std::size_t L = 0;
  std::size_t J = 0;
  // When set, codes are scaled by 1/sqrt(eigenvalue). Off by default.
  bool whiten = false;
  // Q(m) of each block at fit time; not persisted.
  double retained_global = 0.0, retained_body = 0.0;

  std::size_t k_global() const { return comps_global.rank() == 2 ? comps_global.dim(1) : 0; }
  std::size_t k_body() const { return comps_body.rank() == 2 ? comps_body.dim(1) : 0; }
  std::size_t code_dim() const { return k_global() + k_body(); }
  std::size_t pose_dim() const { return 3 * J; }
  // All eigenvalues in code order (global block then body block).
  std::vector<double> code_eigenvalues() const;
};

MotionBasis fit_motion_basis(std::span<const Tensor> pose_seqs, double q_target = 0.9);

// Returns [L,3J]: frame 0 is c_p, later frames add the mean motion and the
// component expansion of `code`.
Tensor lmm_decode(const MotionBasis& basis, const Tensor& c_p, const Tensor& code);
// (c_p, code) with c_p the first frame and code the projection of its deltas.
std::pair<Tensor, Tensor> lmm_encode(const MotionBasis& basis, const Tensor& pose_seq);

// Dense decode: poses = reshape(code · B + mu, [L,3J]) + c_p on every frame.
struct LmmDecoder {
  Tensor B;   // [K, L*3J]
  Tensor mu;  // [1, L*3J]
  std::size_t L = 0, pose_dim = 0;
};
LmmDecoder make_decoder(const MotionBasis& basis);
// c_p [3J], code [K] -> poses [L,3J].
Var lmm_decode_op(const LmmDecoder& decoder, Var c_p, Var code);

void store_basis(const MotionBasis& basis, TensorArchive& archive);
MotionBasis load_basis(const TensorArchive& archive);

}  // namespace h4d
