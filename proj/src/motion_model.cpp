#include "h4d/motion_model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace h4d {

namespace {

using MatrixXd = Eigen::MatrixXd;
using VectorXd = Eigen::VectorXd;

MatrixXd to_eigen(const Tensor& t) {
  MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m(Eigen::Index(r), Eigen::Index(c)) = t.at(r, c);
  return m;
}

void check_sequence(const Tensor& seq, std::size_t L, std::size_t J) {
  if (seq.shape() != Shape{L, 3 * J}) {
    throw DimensionError("pose sequence " + shape_string(seq.shape()) + " does not match basis [" + std::to_string(L) +
                         "," + std::to_string(3 * J) + "]");
  }
}

// Delta of (frame t, column c) relative to frame 0.
double delta(const Tensor& seq, std::size_t t, std::size_t c) { return double(seq.at(t, c)) - double(seq.at(0, c)); }

std::vector<double> block_scale(const Tensor& eig, bool whiten) {
  std::vector<double> s(eig.size(), 1.0);
  if (whiten)
    for (std::size_t i = 0; i < eig.size(); ++i) s[i] = std::sqrt(std::max(0.0, double(eig[i])));
  return s;
}

}  // namespace

double variance_fraction(std::span<const double> spectrum, std::size_t m) {
  const double total = std::accumulate(spectrum.begin(), spectrum.end(), 0.0);
  if (total <= 0.0) return 1.0;
  m = std::min(m, spectrum.size());
  return std::accumulate(spectrum.begin(), spectrum.begin() + std::ptrdiff_t(m), 0.0) / total;
}

std::size_t select_components(std::span<const double> spectrum, double q) {
  const double total = std::accumulate(spectrum.begin(), spectrum.end(), 0.0);
  if (spectrum.empty() || total <= 0.0) return 0;
  if (q >= 1.0) {
    const double tol = 1e-12 * total;
    return std::size_t(std::count_if(spectrum.begin(), spectrum.end(), [tol](double l) { return l > tol; }));
  }
  double acc = 0.0;
  for (std::size_t m = 0; m < spectrum.size(); ++m) {
    acc += spectrum[m];
    if (acc / total > q) return m + 1;
  }
  return spectrum.size();
}

PcaFit fit_pca(const Tensor& rows, double q_target) {
  if (rows.rank() != 2) throw DimensionError("fit_pca: rows must be [N,D]");
  const std::size_t N = rows.dim(0), D = rows.dim(1);
  if (N < 2) throw ConfigError("fit_pca needs at least 2 rows, got " + std::to_string(N));
  if (!(q_target > 0.0 && q_target <= 1.0)) throw ConfigError("fit_pca: q_target must lie in (0,1]");
  rows.require_finite("fit_pca");

  MatrixXd X = to_eigen(rows);
  const VectorXd mean = X.colwise().mean();
  X.rowwise() -= mean.transpose();

  // Covariance X^T X / (N-1) via the thin SVD of the centered rows.
  Eigen::BDCSVD<MatrixXd> svd(X, Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  PcaFit fit;
  fit.spectrum.assign(D, 0.0);
  for (Eigen::Index i = 0; i < sv.size(); ++i) fit.spectrum[std::size_t(i)] = sv(i) * sv(i) / double(N - 1);
  fit.m = select_components(fit.spectrum, q_target);

  fit.mean = Tensor(Shape{D});
  for (std::size_t d = 0; d < D; ++d) fit.mean[d] = static_cast<float>(mean(Eigen::Index(d)));
  fit.components = Tensor(Shape{D, fit.m});
  fit.eigenvalues = Tensor(Shape{fit.m});
  const MatrixXd& V = svd.matrixV();
  for (std::size_t k = 0; k < fit.m; ++k) {
    const auto col = V.col(Eigen::Index(k));
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    const double sign = col(arg) < 0.0 ? -1.0 : 1.0;
    for (std::size_t d = 0; d < D; ++d) fit.components.at(d, k) = static_cast<float>(sign * col(Eigen::Index(d)));
    fit.eigenvalues[k] = static_cast<float>(fit.spectrum[k]);
  }
  return fit;
}

DeltaRows build_delta_matrix(std::span<const Tensor> pose_seqs) {
  if (pose_seqs.empty()) throw ConfigError("build_delta_matrix: no sequences");
  const Tensor& first = pose_seqs.front();
  if (first.rank() != 2 || first.dim(1) % 3 != 0 || first.dim(1) < 6) {
    throw DimensionError("pose sequences must be [L,3J] with J >= 2");
  }
  const std::size_t L = first.dim(0), J = first.dim(1) / 3;
  if (L < 2) throw DimensionError("pose sequences need at least 2 frames");
  const std::size_t N = pose_seqs.size(), Db = 3 * (J - 1);
  DeltaRows out{Tensor(Shape{N, 3 * (L - 1)}), Tensor(Shape{N, Db * (L - 1)})};
  for (std::size_t i = 0; i < N; ++i) {
    const Tensor& s = pose_seqs[i];
    if (s.shape() != first.shape()) {
      throw DimensionError("sequence " + std::to_string(i) + " is " + shape_string(s.shape()) + ", expected " +
                           shape_string(first.shape()));
    }
    for (std::size_t t = 1; t < L; ++t) {
      for (std::size_t c = 0; c < 3; ++c) out.global.at(i, (t - 1) * 3 + c) = static_cast<float>(delta(s, t, c));
      for (std::size_t c = 0; c < Db; ++c) out.body.at(i, (t - 1) * Db + c) = static_cast<float>(delta(s, t, 3 + c));
    }
  }
  return out;
}

std::vector<double> MotionBasis::code_eigenvalues() const {
  std::vector<double> e;
  for (float v : eig_global.values()) e.push_back(v);
  for (float v : eig_body.values()) e.push_back(v);
  return e;
}

MotionBasis fit_motion_basis(std::span<const Tensor> pose_seqs, double q_target) {
  if (pose_seqs.size() < 2) throw ConfigError("fit_motion_basis needs at least 2 sequences");
  const DeltaRows rows = build_delta_matrix(pose_seqs);
  PcaFit g = fit_pca(rows.global, q_target);
  PcaFit b = fit_pca(rows.body, q_target);
  MotionBasis basis;
  basis.mean_global = std::move(g.mean);
  basis.comps_global = std::move(g.components);
  basis.eig_global = std::move(g.eigenvalues);
  basis.mean_body = std::move(b.mean);
  basis.comps_body = std::move(b.components);
  basis.eig_body = std::move(b.eigenvalues);
  basis.L = pose_seqs.front().dim(0);
  basis.J = pose_seqs.front().dim(1) / 3;
  basis.retained_global = variance_fraction(g.spectrum, g.m);
  basis.retained_body = variance_fraction(b.spectrum, b.m);
  return basis;
}

Tensor lmm_decode(const MotionBasis& basis, const Tensor& c_p, const Tensor& code) {
  const std::size_t L = basis.L, J = basis.J, P = 3 * J, Db = 3 * (J - 1);
  const std::size_t Kg = basis.k_global(), Kb = basis.k_body();
  if (c_p.size() != P) throw DimensionError("lmm_decode: c_p has " + std::to_string(c_p.size()) + " entries, expected " + std::to_string(P));
  if (code.size() != Kg + Kb) {
    throw DimensionError("lmm_decode: code has " + std::to_string(code.size()) + " entries, basis has " +
                         std::to_string(Kg + Kb));
  }
  const std::vector<double> sg = block_scale(basis.eig_global, basis.whiten), sb = block_scale(basis.eig_body, basis.whiten);
  Tensor out(Shape{L, P});
  for (std::size_t c = 0; c < P; ++c) out.at(0, c) = c_p[c];
  for (std::size_t t = 1; t < L; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t d = (t - 1) * 3 + c;
      double v = double(c_p[c]) + basis.mean_global[d];
      for (std::size_t k = 0; k < Kg; ++k) v += double(basis.comps_global.at(d, k)) * sg[k] * code[k];
      out.at(t, c) = static_cast<float>(v);
    }
    for (std::size_t c = 0; c < Db; ++c) {
      const std::size_t d = (t - 1) * Db + c;
      double v = double(c_p[3 + c]) + basis.mean_body[d];
      for (std::size_t k = 0; k < Kb; ++k) v += double(basis.comps_body.at(d, k)) * sb[k] * code[Kg + k];
      out.at(t, 3 + c) = static_cast<float>(v);
    }
  }
  return out;
}

std::pair<Tensor, Tensor> lmm_encode(const MotionBasis& basis, const Tensor& pose_seq) {
  const std::size_t L = basis.L, J = basis.J, Db = 3 * (J - 1);
  check_sequence(pose_seq, L, J);
  const std::size_t Kg = basis.k_global(), Kb = basis.k_body();
  const std::vector<double> sg = block_scale(basis.eig_global, basis.whiten), sb = block_scale(basis.eig_body, basis.whiten);
  Tensor c_p(Shape{3 * J});
  for (std::size_t c = 0; c < 3 * J; ++c) c_p[c] = pose_seq.at(0, c);
  Tensor code(Shape{Kg + Kb});
  for (std::size_t k = 0; k < Kg; ++k) {
    double a = 0.0;
    for (std::size_t t = 1; t < L; ++t)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t d = (t - 1) * 3 + c;
        a += double(basis.comps_global.at(d, k)) * (delta(pose_seq, t, c) - basis.mean_global[d]);
      }
    code[k] = static_cast<float>(sg[k] > 0.0 ? a / sg[k] : 0.0);
  }
  for (std::size_t k = 0; k < Kb; ++k) {
    double a = 0.0;
    for (std::size_t t = 1; t < L; ++t)
      for (std::size_t c = 0; c < Db; ++c) {
        const std::size_t d = (t - 1) * Db + c;
        a += double(basis.comps_body.at(d, k)) * (delta(pose_seq, t, 3 + c) - basis.mean_body[d]);
      }
    code[Kg + k] = static_cast<float>(sb[k] > 0.0 ? a / sb[k] : 0.0);
  }
  return {std::move(c_p), std::move(code)};
}

LmmDecoder make_decoder(const MotionBasis& basis) {
  const std::size_t L = basis.L, P = 3 * basis.J, Db = P - 3;
  const std::size_t Kg = basis.k_global(), Kb = basis.k_body();
  const std::vector<double> sg = block_scale(basis.eig_global, basis.whiten), sb = block_scale(basis.eig_body, basis.whiten);
  LmmDecoder dec{Tensor(Shape{Kg + Kb, L * P}), Tensor(Shape{1, L * P}), L, P};
  for (std::size_t t = 1; t < L; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t d = (t - 1) * 3 + c;
      dec.mu[t * P + c] = basis.mean_global[d];
      for (std::size_t k = 0; k < Kg; ++k) dec.B.at(k, t * P + c) = static_cast<float>(basis.comps_global.at(d, k) * sg[k]);
    }
    for (std::size_t c = 0; c < Db; ++c) {
      const std::size_t d = (t - 1) * Db + c;
      dec.mu[t * P + 3 + c] = basis.mean_body[d];
      for (std::size_t k = 0; k < Kb; ++k) {
        dec.B.at(Kg + k, t * P + 3 + c) = static_cast<float>(basis.comps_body.at(d, k) * sb[k]);
      }
    }
  }
  return dec;
}

Var lmm_decode_op(const LmmDecoder& decoder, Var c_p, Var code) {
  const std::size_t K = decoder.B.dim(0);
  if (code.value().size() != K) {
    throw DimensionError("lmm_decode_op: code has " + std::to_string(code.value().size()) + " entries, basis has " +
                         std::to_string(K));
  }
  if (c_p.value().size() != decoder.pose_dim) throw DimensionError("lmm_decode_op: c_p size mismatch");
  Tape& tape = *code.tape();
  Var flat = add(matmul(reshape(code, Shape{1, K}), tape.constant(decoder.B)), tape.constant(decoder.mu));
  return add_row(reshape(flat, Shape{decoder.L, decoder.pose_dim}), reshape(c_p, Shape{decoder.pose_dim}));
}

void store_basis(const MotionBasis& basis, TensorArchive& archive) {
  archive.put("lmm.mean_global", basis.mean_global);
  archive.put("lmm.comps_global", basis.comps_global);
  archive.put("lmm.eig_global", basis.eig_global);
  archive.put("lmm.mean_body", basis.mean_body);
  archive.put("lmm.comps_body", basis.comps_body);
  archive.put("lmm.eig_body", basis.eig_body);
  archive.put("lmm.L", Tensor::scalar(float(basis.L)));
  archive.put("lmm.J", Tensor::scalar(float(basis.J)));
  archive.put("lmm.whiten", Tensor::scalar(basis.whiten ? 1.0f : 0.0f));
}

MotionBasis load_basis(const TensorArchive& archive) {
  MotionBasis b;
  b.mean_global = archive.get("lmm.mean_global");
  b.comps_global = archive.get("lmm.comps_global");
  b.eig_global = archive.get("lmm.eig_global");
  b.mean_body = archive.get("lmm.mean_body");
  b.comps_body = archive.get("lmm.comps_body");
  b.eig_body = archive.get("lmm.eig_body");
  b.L = std::size_t(archive.scalar("lmm.L"));
  b.J = archive.contains("lmm.J") ? std::size_t(archive.scalar("lmm.J"))
                                  : b.mean_body.size() / (3 * std::max<std::size_t>(1, b.L - 1)) + 1;
  b.whiten = archive.contains("lmm.whiten") && archive.scalar("lmm.whiten") != 0.0f;
  if (b.L < 2 || b.J < 2 || b.mean_global.size() != 3 * (b.L - 1) || b.mean_body.size() != 3 * (b.J - 1) * (b.L - 1) ||
      b.comps_global.rank() != 2 || b.comps_global.dim(0) != b.mean_global.size() || b.comps_body.rank() != 2 ||
      b.comps_body.dim(0) != b.mean_body.size() || b.eig_global.size() != b.k_global() ||
      b.eig_body.size() != b.k_body()) {
    throw ConfigError("archive holds an inconsistent motion basis");
  }
  return b;
}

}  // namespace h4d
