#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "h4d/motion_model.hpp"
#include "oracles/finite_difference.hpp"
#include "oracles/jacobi.hpp"
#include "oracles/random.hpp"

using namespace h4d;
using oracle::random_tensor;

namespace {

// Smooth random sequence [L,3J] around a random initial pose.
Tensor smooth_sequence(std::size_t L, std::size_t J, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor s(Shape{L, 3 * J});
  for (std::size_t c = 0; c < 3 * J; ++c) {
    const float base = 0.3f * u(rng), amp = 0.4f * u(rng), freq = 0.1f + 0.2f * (u(rng) + 1.0f), phase = 3.0f * u(rng);
    for (std::size_t t = 0; t < L; ++t) s.at(t, c) = base + amp * std::sin(freq * float(t) + phase);
  }
  return s;
}

std::vector<Tensor> corpus(std::size_t n, std::size_t L, std::size_t J, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> seqs;
  for (std::size_t i = 0; i < n; ++i) seqs.push_back(smooth_sequence(L, J, rng));
  return seqs;
}

std::vector<std::vector<double>> to_rows(const Tensor& t) {
  std::vector<std::vector<double>> rows(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) rows[r][c] = t.at(r, c);
  return rows;
}

double gram_error(const Tensor& C) {
  const std::size_t D = C.dim(0), m = C.dim(1);
  double worst = 0.0;
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b) {
      double g = 0.0;
      for (std::size_t d = 0; d < D; ++d) g += double(C.at(d, a)) * C.at(d, b);
      worst = std::max(worst, std::abs(g - (a == b ? 1.0 : 0.0)));
    }
  return worst;
}

}  // namespace

TEST(DeltaMatrix, ConstantSequenceGivesZeroRow) {
  std::mt19937_64 rng(1);
  Tensor s(Shape{6, 72});
  const Tensor pose = random_tensor({72}, rng);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t c = 0; c < 72; ++c) s.at(t, c) = pose[c];
  const DeltaRows rows = build_delta_matrix(std::vector<Tensor>{s});
  for (float v : rows.global.values()) EXPECT_EQ(v, 0.0f);
  for (float v : rows.body.values()) EXPECT_EQ(v, 0.0f);
}

TEST(DeltaMatrix, TwoFramesSplitRootAndBody) {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({72}, rng), d = random_tensor({72}, rng);
  Tensor s(Shape{2, 72});
  for (std::size_t c = 0; c < 72; ++c) {
    s.at(0, c) = a[c];
    s.at(1, c) = a[c] + d[c];
  }
  const DeltaRows rows = build_delta_matrix(std::vector<Tensor>{s});
  ASSERT_EQ(rows.global.shape(), (Shape{1, 3}));
  ASSERT_EQ(rows.body.shape(), (Shape{1, 69}));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(rows.global[c], d[c], 1e-6);
  for (std::size_t c = 0; c < 69; ++c) EXPECT_NEAR(rows.body[c], d[3 + c], 1e-6);
}

TEST(DeltaMatrix, ThirtyFrameShapes) {
  const auto seqs = corpus(5, 30, 24, 3);
  const DeltaRows rows = build_delta_matrix(seqs);
  EXPECT_EQ(rows.global.shape(), (Shape{5, 87}));
  EXPECT_EQ(rows.body.shape(), (Shape{5, 2001}));
  auto bad = seqs;
  bad.push_back(Tensor(Shape{29, 72}));
  EXPECT_THROW(build_delta_matrix(bad), DimensionError);
}

TEST(Pca, RankOneData) {
  std::mt19937_64 rng(4);
  const Tensor v = random_tensor({6}, rng), mu = random_tensor({6}, rng);
  Tensor rows(Shape{20, 6});
  std::normal_distribution<float> n01(0.0f, 1.0f);
  for (std::size_t r = 0; r < 20; ++r) {
    const float s = n01(rng);
    for (std::size_t c = 0; c < 6; ++c) rows.at(r, c) = s * v[c] + mu[c];
  }
  const PcaFit fit = fit_pca(rows, 0.9);
  ASSERT_EQ(fit.m, 1u);
  double dot = 0, nv = 0;
  for (std::size_t c = 0; c < 6; ++c) {
    dot += double(fit.components.at(c, 0)) * v[c];
    nv += double(v[c]) * v[c];
  }
  EXPECT_NEAR(std::abs(dot) / std::sqrt(nv), 1.0, 1e-5);
}

TEST(Pca, CompleteBasisReconstructsRows) {
  std::mt19937_64 rng(5);
  for (auto [N, D] : {std::pair<std::size_t, std::size_t>{10, 5}, {4, 8}, {12, 12}}) {
    const Tensor rows = random_tensor({N, D}, rng);
    const PcaFit fit = fit_pca(rows, 1.0);
    EXPECT_EQ(fit.m, std::min(N - 1, D));
    for (std::size_t r = 0; r < N; ++r) {
      std::vector<double> a(fit.m, 0.0);
      for (std::size_t k = 0; k < fit.m; ++k)
        for (std::size_t d = 0; d < D; ++d) a[k] += double(fit.components.at(d, k)) * (rows.at(r, d) - fit.mean[d]);
      for (std::size_t d = 0; d < D; ++d) {
        double x = fit.mean[d];
        for (std::size_t k = 0; k < fit.m; ++k) x += fit.components.at(d, k) * a[k];
        EXPECT_NEAR(x, rows.at(r, d), 1e-4);
      }
    }
  }
}

TEST(Pca, MatchesJacobiOracle) {
  std::mt19937_64 rng(6);
  const Tensor rows = random_tensor({50, 8}, rng);
  const PcaFit fit = fit_pca(rows, 1.0);
  const oracle::SymmetricEigen ref = oracle::jacobi_eigen(oracle::covariance(to_rows(rows)));
  ASSERT_EQ(fit.m, 8u);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_NEAR(fit.spectrum[k], ref.values[k], 1e-5);
    EXPECT_NEAR(fit.eigenvalues[k], ref.values[k], 1e-5);
    for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(fit.components.at(d, k), ref.vectors[k][d], 1e-5);
  }
}

TEST(Pca, InvariantsAndSelector) {
  std::mt19937_64 rng(7);
  const Tensor rows = random_tensor({30, 20}, rng);
  const PcaFit fit = fit_pca(rows, 0.9);
  EXPECT_LT(gram_error(fit.components), 1e-4);
  for (std::size_t k = 1; k < fit.spectrum.size(); ++k) EXPECT_LE(fit.spectrum[k], fit.spectrum[k - 1]);
  for (double l : fit.spectrum) EXPECT_GE(l, 0.0);
  for (std::size_t m = 1; m <= fit.spectrum.size(); ++m)
    EXPECT_GE(variance_fraction(fit.spectrum, m), variance_fraction(fit.spectrum, m - 1));
  EXPECT_GT(variance_fraction(fit.spectrum, fit.m), 0.9);
  EXPECT_LE(variance_fraction(fit.spectrum, fit.m - 1), 0.9);
}

TEST(Pca, SelectorHandCases) {
  const std::vector<double> s = {5, 3, 1, 1};  // Q = .5 .8 .9 1
  EXPECT_EQ(select_components(s, 0.4), 1u);
  EXPECT_EQ(select_components(s, 0.5), 2u);  // strictly greater
  EXPECT_EQ(select_components(s, 0.85), 3u);
  EXPECT_EQ(select_components(s, 0.9), 4u);
  EXPECT_EQ(select_components(s, 1.0), 4u);
  EXPECT_EQ(select_components(std::vector<double>{2, 1, 0, 0}, 1.0), 2u);
  EXPECT_EQ(select_components(std::vector<double>{0, 0}, 0.9), 0u);
}

TEST(Pca, Errors) {
  EXPECT_THROW(fit_pca(Tensor(Shape{1, 4}), 0.9), ConfigError);
  EXPECT_THROW(fit_pca(Tensor(Shape{5, 4}), 0.0), ConfigError);
  EXPECT_THROW(fit_pca(Tensor(Shape{5, 4}), 1.5), ConfigError);
}

TEST(MotionBasis, RepeatedSequenceIsDegenerate) {
  const auto one = corpus(1, 8, 4, 8);
  const std::vector<Tensor> seqs = {one[0], one[0], one[0]};
  const MotionBasis b = fit_motion_basis(seqs, 0.9);
  EXPECT_EQ(b.code_dim(), 0u);
  const auto [c_p, code] = lmm_encode(b, one[0]);
  EXPECT_LE(max_abs_diff(lmm_decode(b, c_p, code), one[0]), 1e-6);
}

TEST(MotionBasis, BlocksReachVarianceTarget) {
  const auto seqs = corpus(60, 30, 24, 9);
  const MotionBasis b = fit_motion_basis(seqs, 0.9);
  const DeltaRows rows = build_delta_matrix(seqs);
  for (const Tensor* r : {&rows.global, &rows.body}) {
    const PcaFit f = fit_pca(*r, 0.9);
    EXPECT_GT(variance_fraction(f.spectrum, f.m), 0.9);
  }
  EXPECT_EQ(b.L, 30u);
  EXPECT_EQ(b.J, 24u);
  EXPECT_LT(gram_error(b.comps_global), 1e-4);
  EXPECT_LT(gram_error(b.comps_body), 1e-4);
  EXPECT_EQ(b.code_dim(), b.k_global() + b.k_body());
}

TEST(Lmm, ZeroCodeGivesMeanMotion) {
  const auto seqs = corpus(20, 10, 5, 10);
  const MotionBasis b = fit_motion_basis(seqs, 0.9);
  std::mt19937_64 rng(1);
  const Tensor c_p = random_tensor({15}, rng);
  const Tensor out = lmm_decode(b, c_p, Tensor(Shape{b.code_dim()}));
  for (std::size_t c = 0; c < 15; ++c) EXPECT_EQ(out.at(0, c), c_p[c]);
  for (std::size_t t = 1; t < 10; ++t) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.at(t, c), c_p[c] + b.mean_global[(t - 1) * 3 + c], 1e-6);
    for (std::size_t c = 0; c < 12; ++c) EXPECT_NEAR(out.at(t, 3 + c), c_p[3 + c] + b.mean_body[(t - 1) * 12 + c], 1e-6);
  }
  MotionBasis zero = b;
  zero.mean_global = Tensor(zero.mean_global.shape());
  zero.mean_body = Tensor(zero.mean_body.shape());
  const Tensor flat = lmm_decode(zero, c_p, Tensor(Shape{b.code_dim()}));
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t c = 0; c < 15; ++c) EXPECT_EQ(flat.at(t, c), c_p[c]);
  EXPECT_THROW(lmm_decode(b, c_p, Tensor(Shape{b.code_dim() + 1})), DimensionError);
}

TEST(Lmm, CompleteBasisRoundTrip) {
  const auto seqs = corpus(40, 30, 24, 11);
  const MotionBasis b = fit_motion_basis(seqs, 1.0);
  for (const Tensor& s : seqs) {
    const auto [c_p, code] = lmm_encode(b, s);
    EXPECT_LE(max_abs_diff(lmm_decode(b, c_p, code), s), 1e-4);
  }
}

TEST(Lmm, EncodeIsLeastSquaresProjection) {
  const auto seqs = corpus(30, 8, 4, 12);
  const MotionBasis b = fit_motion_basis(seqs, 0.8);
  std::mt19937_64 rng(13);
  const Tensor s = smooth_sequence(8, 4, rng);
  const auto [c_p, code] = lmm_encode(b, s);
  // Oracle: QR least squares on the body block, independent of the transpose projection.
  const DeltaRows rows = build_delta_matrix(std::vector<Tensor>{s});
  const std::size_t D = b.mean_body.size(), K = b.k_body();
  Eigen::MatrixXd C(D, K);
  Eigen::VectorXd y(D);
  for (std::size_t d = 0; d < D; ++d) {
    y(Eigen::Index(d)) = double(rows.body[d]) - b.mean_body[d];
    for (std::size_t k = 0; k < K; ++k) C(Eigen::Index(d), Eigen::Index(k)) = b.comps_body.at(d, k);
  }
  const Eigen::VectorXd ls = C.colPivHouseholderQr().solve(y);
  for (std::size_t k = 0; k < K; ++k) EXPECT_NEAR(code[b.k_global() + k], ls(Eigen::Index(k)), 1e-4);
}

TEST(Lmm, ConstantSequenceAndLinearity) {
  const auto seqs = corpus(30, 8, 4, 14);
  const MotionBasis b = fit_motion_basis(seqs, 0.9);
  Tensor constant(Shape{8, 12});
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t c = 0; c < 12; ++c) constant.at(t, c) = 0.1f * float(c);
  const auto [cp0, a0] = lmm_encode(b, constant);
  for (std::size_t k = 0; k < b.k_global(); ++k) {
    double e = 0;
    for (std::size_t d = 0; d < b.mean_global.size(); ++d) e -= double(b.comps_global.at(d, k)) * b.mean_global[d];
    EXPECT_NEAR(a0[k], e, 1e-5);
  }
  // Sequences sharing frame 0: encode(s1 + s2 deltas) = encode(s1) + encode(s2) - encode(constant).
  std::mt19937_64 rng(15);
  Tensor s1 = smooth_sequence(8, 4, rng), s2 = smooth_sequence(8, 4, rng), s12(Shape{8, 12});
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t c = 0; c < 12; ++c) {
      const float d1 = s1.at(t, c) - s1.at(0, c), d2 = s2.at(t, c) - s2.at(0, c);
      s1.at(t, c) = constant.at(0, c) + d1;
      s2.at(t, c) = constant.at(0, c) + d2;
      s12.at(t, c) = constant.at(0, c) + d1 + d2;
    }
  const Tensor a1 = lmm_encode(b, s1).second, a2 = lmm_encode(b, s2).second, a12 = lmm_encode(b, s12).second;
  for (std::size_t k = 0; k < b.code_dim(); ++k) EXPECT_NEAR(a12[k], a1[k] + a2[k] - a0[k], 1e-5);
}

TEST(Lmm, ProjectionIsIdempotent) {
  const auto seqs = corpus(30, 12, 6, 16);
  const MotionBasis b = fit_motion_basis(seqs, 0.9);
  std::mt19937_64 rng(17);
  const Tensor s = smooth_sequence(12, 6, rng);
  const auto [c_p, code] = lmm_encode(b, s);
  const auto [c_p2, code2] = lmm_encode(b, lmm_decode(b, c_p, code));
  EXPECT_EQ(c_p2, c_p);
  EXPECT_LE(max_abs_diff(code2, code), 1e-5);
}

TEST(Lmm, ReconstructionErrorShrinksWithMoreComponents) {
  const auto seqs = corpus(40, 10, 5, 18);
  std::mt19937_64 rng(19);
  const Tensor s = smooth_sequence(10, 5, rng);
  double prev = 1e30;
  std::size_t prev_k = 0;
  for (double q : {0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0}) {
    const MotionBasis b = fit_motion_basis(seqs, q);
    EXPECT_GE(b.code_dim(), prev_k);
    const auto [c_p, code] = lmm_encode(b, s);
    const Tensor r = lmm_decode(b, c_p, code);
    double err = 0;
    for (std::size_t i = 0; i < r.size(); ++i) err += double(r[i] - s[i]) * (r[i] - s[i]);
    EXPECT_LE(err, prev + 1e-9) << "q=" << q;
    prev = err;
    prev_k = b.code_dim();
  }
}

TEST(Lmm, TapeDecodeMatchesPlainDecodeAndDifferentiates) {
  const auto seqs = corpus(25, 6, 4, 20);
  for (bool whiten : {false, true}) {
    MotionBasis b = fit_motion_basis(seqs, 0.9);
    b.whiten = whiten;
    const LmmDecoder dec = make_decoder(b);
    std::mt19937_64 rng(21);
    const Tensor c_p = random_tensor({12}, rng), code = random_tensor({b.code_dim()}, rng);
    Tape tape;
    const Tensor out = lmm_decode_op(dec, tape.constant(c_p), tape.constant(code)).value();
    EXPECT_LE(max_abs_diff(out, lmm_decode(b, c_p, code)), 1e-5);
    const Tensor w = random_tensor({6, 12}, rng);
    auto loss = [&](Tape& t, const std::vector<Var>& in) {
      return sum(mul(lmm_decode_op(dec, in[0], in[1]), t.constant(w)));
    };
    EXPECT_LT(oracle::gradient_check(loss, {c_p, code}).max_rel_error, 1e-3);
  }
}

TEST(Lmm, WhitenedRoundTripAndScaling) {
  const auto seqs = corpus(30, 8, 4, 22);
  MotionBasis raw = fit_motion_basis(seqs, 1.0);
  MotionBasis white = raw;
  white.whiten = true;
  const auto [c_p, a_raw] = lmm_encode(raw, seqs[3]);
  const Tensor a_white = lmm_encode(white, seqs[3]).second;
  const std::vector<double> eig = raw.code_eigenvalues();
  for (std::size_t k = 0; k < eig.size(); ++k) EXPECT_NEAR(a_white[k] * std::sqrt(eig[k]), a_raw[k], 1e-4);
  EXPECT_LE(max_abs_diff(lmm_decode(white, c_p, a_white), seqs[3]), 1e-4);
}

TEST(Lmm, ArchiveRoundTrip) {
  const auto seqs = corpus(20, 7, 3, 23);
  const MotionBasis b = fit_motion_basis(seqs, 0.9);
  TensorArchive ar;
  store_basis(b, ar);
  const MotionBasis back = load_basis(decode_archive(encode_archive(ar)));
  EXPECT_EQ(back.comps_body, b.comps_body);
  EXPECT_EQ(back.eig_global, b.eig_global);
  EXPECT_EQ(back.L, 7u);
  EXPECT_EQ(back.J, 3u);
  EXPECT_FALSE(back.whiten);
  for (const char* name : {"lmm.mean_global", "lmm.comps_global", "lmm.eig_global", "lmm.mean_body", "lmm.comps_body",
                           "lmm.eig_body", "lmm.L"})
    EXPECT_TRUE(ar.contains(name)) << name;
}
