#include "h4d/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace h4d {

namespace {

constexpr double kPi = 3.14159265358979323846;

// R = I + a·K + b·K², K = [ω]×; c = a'(θ)/θ and d = b'(θ)/θ feed the Jacobian.
struct RodriguesCoeffs {
  double a, b, c, d;
};

RodriguesCoeffs rodrigues_coeffs(double theta) {
  if (theta < 1e-3) {
    const double t2 = theta * theta;
    return {1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, -1.0 / 3.0 + t2 / 30.0,
            -1.0 / 12.0 + t2 / 180.0};
  }
  const double s = std::sin(theta), c = std::cos(theta);
  const double t2 = theta * theta, t3 = t2 * theta;
  return {s / theta, (1.0 - c) / t2, (theta * c - s) / t3, (theta * s - 2.0 * (1.0 - c)) / (t3 * theta)};
}

using Mat3 = std::array<double, 9>;

Mat3 skew(double x, double y, double z) { return {0, -z, y, z, 0, -x, -y, x, 0}; }

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

Mat3 mat_mul_tn(const Mat3& a, const Mat3& b) {  // aᵀ·b
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[k * 3 + i] * b[k * 3 + j];
  return c;
}

Mat3 mat_mul_nt(const Mat3& a, const Mat3& b) {  // a·bᵀ
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[j * 3 + k];
  return c;
}

Mat3 rodrigues_matrix(double x, double y, double z) {
  const double theta = std::sqrt(x * x + y * y + z * z);
  const RodriguesCoeffs k = rodrigues_coeffs(theta);
  const Mat3 K = skew(x, y, z);
  const Mat3 K2 = mat_mul(K, K);
  Mat3 r{};
  for (int i = 0; i < 9; ++i) r[i] = k.a * K[i] + k.b * K2[i];
  r[0] += 1.0;
  r[4] += 1.0;
  r[8] += 1.0;
  return r;
}

void validate_parents(std::span<const int> parents) {
  if (parents.empty() || parents[0] != -1) throw ConfigError("kinematic tree: joint 0 must be the root");
  for (std::size_t i = 1; i < parents.size(); ++i) {
    if (parents[i] < 0 || std::size_t(parents[i]) >= i) {
      throw ConfigError("kinematic tree: parents[" + std::to_string(i) + "] must precede joint " + std::to_string(i));
    }
  }
}

struct Frames {
  std::vector<Mat3> rg;                   // global rotations
  std::vector<std::array<double, 3>> tg;  // global joint positions
};

Frames global_frames(const std::vector<int>& parents, std::size_t L, const Tensor& R, const Tensor& Jr,
                     const Tensor* T) {
  const std::size_t J = parents.size();
  Frames f{std::vector<Mat3>(L * J), std::vector<std::array<double, 3>>(L * J)};
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t i = 0; i < J; ++i) {
      Mat3 local;
      for (int k = 0; k < 9; ++k) local[k] = R[(l * J + i) * 9 + k];
      const std::size_t id = l * J + i;
      if (i == 0) {
        f.rg[id] = local;
        for (int c = 0; c < 3; ++c) f.tg[id][c] = double(Jr[c]) + (T ? double((*T)[l * 3 + c]) : 0.0);
      } else {
        const std::size_t p = l * J + std::size_t(parents[i]);
        f.rg[id] = mat_mul(f.rg[p], local);
        double d[3];
        for (int c = 0; c < 3; ++c) d[c] = double(Jr[i * 3 + c]) - double(Jr[std::size_t(parents[i]) * 3 + c]);
        for (int r = 0; r < 3; ++r) {
          f.tg[id][r] = f.tg[p][r];
          for (int c = 0; c < 3; ++c) f.tg[id][r] += f.rg[p][r * 3 + c] * d[c];
        }
      }
    }
  }
  return f;
}

}  // namespace

// ---- BodyModel -------------------------------------------------------------

void BodyModel::validate() const {
  if (template_vertices.rank() != 2 || template_vertices.dim(1) != 3) throw ConfigError("template must be [V,3]");
  const std::size_t V = num_vertices();
  const std::size_t J = parents.size();
  validate_parents(parents);
  if (shape_basis.rank() != 3 || shape_basis.dim(0) != V || shape_basis.dim(1) != 3) {
    throw ConfigError("shape_basis must be [V,3,S]");
  }
  if (joint_regressor.shape() != Shape{J, V}) throw ConfigError("joint_regressor must be [J,V]");
  if (skin_weights.shape() != Shape{V, J}) throw ConfigError("skin_weights must be [V,J]");
  for (std::size_t j = 0; j < J; ++j) {
    double s = 0.0;
    for (std::size_t v = 0; v < V; ++v) s += joint_regressor.at(j, v);
    if (std::abs(s - 1.0) > 1e-5) throw ConfigError("joint_regressor row " + std::to_string(j) + " does not sum to 1");
  }
  for (std::size_t v = 0; v < V; ++v) {
    double s = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      if (skin_weights.at(v, j) < 0.0f) throw ConfigError("negative skin weight at vertex " + std::to_string(v));
      s += skin_weights.at(v, j);
    }
    if (std::abs(s - 1.0) > 1e-5) throw ConfigError("skin_weights row " + std::to_string(v) + " does not sum to 1");
  }
  for (const Face& f : faces)
    for (auto i : f)
      if (i >= V) throw ConfigError("face index out of range");
  if (!template_vertices.all_finite() || !shape_basis.all_finite()) throw ConfigError("non-finite model geometry");
}

std::vector<bool> BodyModel::leaf_joints() const {
  std::vector<bool> leaf(parents.size(), true);
  for (std::size_t i = 1; i < parents.size(); ++i) leaf[std::size_t(parents[i])] = false;
  return leaf;
}

// ---- tape ops --------------------------------------------------------------

Var rodrigues_op(Var axis_angles) {
  const Tensor& W = axis_angles.value();
  if (W.rank() != 2 || W.dim(1) != 3) throw DimensionError("rodrigues_op: expected [n,3], got " + shape_string(W.shape()));
  const std::size_t n = W.dim(0);
  Tensor out(Shape{n, 9});
  for (std::size_t r = 0; r < n; ++r) {
    const Mat3 R = rodrigues_matrix(W[r * 3], W[r * 3 + 1], W[r * 3 + 2]);
    for (int i = 0; i < 9; ++i) out[r * 9 + i] = static_cast<float>(R[i]);
  }
  return axis_angles.tape()->record(std::move(out), {axis_angles}, [axis_angles, n](Tape& t, const Tensor& g) {
    const Tensor& W = t.value(axis_angles);
    Tensor& gw = t.grad_ref(axis_angles);
    for (std::size_t r = 0; r < n; ++r) {
      const double w[3] = {W[r * 3], W[r * 3 + 1], W[r * 3 + 2]};
      const double theta = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
      const RodriguesCoeffs k = rodrigues_coeffs(theta);
      const Mat3 K = skew(w[0], w[1], w[2]);
      const Mat3 K2 = mat_mul(K, K);
      for (int axis = 0; axis < 3; ++axis) {
        const Mat3 E = skew(axis == 0, axis == 1, axis == 2);
        const Mat3 EK = mat_mul(E, K), KE = mat_mul(K, E);
        double acc = 0.0;
        for (int i = 0; i < 9; ++i) {
          const double d = k.a * E[i] + k.b * (EK[i] + KE[i]) + w[axis] * (k.c * K[i] + k.d * K2[i]);
          acc += double(g[r * 9 + i]) * d;
        }
        gw[r * 3 + axis] += static_cast<float>(acc);
      }
    }
  });
}

Var fk_op(Var rotations, Var rest_joints, std::span<const int> parents_in, std::optional<Var> translation) {
  validate_parents(parents_in);
  const std::vector<int> parents(parents_in.begin(), parents_in.end());
  const std::size_t J = parents.size();
  const Tensor& Rt = rotations.value();
  const Tensor& Jt = rest_joints.value();
  if (Rt.rank() != 2 || Rt.dim(1) != 9 || Rt.dim(0) % J != 0 || Rt.dim(0) == 0) {
    throw DimensionError("fk_op: rotations must be [L*J,9] with J=" + std::to_string(J));
  }
  if (Jt.shape() != Shape{J, 3}) throw DimensionError("fk_op: rest joints must be [J,3]");
  const std::size_t L = Rt.dim(0) / J;
  if (translation && translation->value().shape() != Shape{L, 3}) {
    throw DimensionError("fk_op: translation must be [L,3]");
  }

  const Frames f = global_frames(parents, L, Rt, Jt, translation ? &translation->value() : nullptr);
  Tensor out(Shape{L * J, 12});
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t i = 0; i < J; ++i) {
      const std::size_t id = l * J + i;
      for (int k = 0; k < 9; ++k) out[id * 12 + k] = static_cast<float>(f.rg[id][k]);
      for (int r = 0; r < 3; ++r) {
        double v = f.tg[id][r];
        for (int c = 0; c < 3; ++c) v -= f.rg[id][r * 3 + c] * double(Jt[i * 3 + c]);
        out[id * 12 + 9 + r] = static_cast<float>(v);
      }
    }
  }

  std::vector<Var> inputs = {rotations, rest_joints};
  if (translation) inputs.push_back(*translation);
  return rotations.tape()->record(
      std::move(out), inputs, [rotations, rest_joints, translation, parents, J, L](Tape& t, const Tensor& g) {
        const Tensor& R = t.value(rotations);
        const Tensor& Jr = t.value(rest_joints);
        const Frames f = global_frames(parents, L, R, Jr, translation ? &t.value(*translation) : nullptr);
        std::vector<Mat3> d_rg(L * J, Mat3{});
        std::vector<std::array<double, 3>> d_tg(L * J, {0, 0, 0});
        std::vector<Mat3> d_local(L * J, Mat3{});
        std::vector<double> d_joints(J * 3, 0.0);
        std::vector<double> d_trans(L * 3, 0.0);
        for (std::size_t l = 0; l < L; ++l) {
          // Output A = (Rg, tg − Rg·j).
          for (std::size_t i = 0; i < J; ++i) {
            const std::size_t id = l * J + i;
            double gt[3];
            for (int r = 0; r < 3; ++r) gt[r] = g[id * 12 + 9 + r];
            for (int r = 0; r < 3; ++r) {
              for (int c = 0; c < 3; ++c) {
                d_rg[id][r * 3 + c] += double(g[id * 12 + r * 3 + c]) - gt[r] * double(Jr[i * 3 + c]);
                d_joints[i * 3 + c] -= f.rg[id][r * 3 + c] * gt[r];
              }
              d_tg[id][r] += gt[r];
            }
          }
          for (std::size_t i = J; i-- > 1;) {
            const std::size_t id = l * J + i;
            const std::size_t pj = std::size_t(parents[i]);
            const std::size_t p = l * J + pj;
            Mat3 local;
            for (int k = 0; k < 9; ++k) local[k] = R[id * 9 + k];
            // Rg_i = Rg_p · local
            const Mat3 dp = mat_mul_nt(d_rg[id], local);
            const Mat3 dl = mat_mul_tn(f.rg[p], d_rg[id]);
            for (int k = 0; k < 9; ++k) {
              d_rg[p][k] += dp[k];
              d_local[id][k] += dl[k];
            }
            // tg_i = Rg_p·(j_i − j_p) + tg_p
            double d[3];
            for (int c = 0; c < 3; ++c) d[c] = double(Jr[i * 3 + c]) - double(Jr[pj * 3 + c]);
            for (int r = 0; r < 3; ++r)
              for (int c = 0; c < 3; ++c) d_rg[p][r * 3 + c] += d_tg[id][r] * d[c];
            for (int c = 0; c < 3; ++c) {
              double dd = 0.0;
              for (int r = 0; r < 3; ++r) dd += f.rg[p][r * 3 + c] * d_tg[id][r];
              d_joints[i * 3 + c] += dd;
              d_joints[pj * 3 + c] -= dd;
            }
            for (int r = 0; r < 3; ++r) d_tg[p][r] += d_tg[id][r];
          }
          const std::size_t root = l * J;
          for (int k = 0; k < 9; ++k) d_local[root][k] += d_rg[root][k];
          for (int c = 0; c < 3; ++c) {
            d_joints[c] += d_tg[root][c];
            d_trans[l * 3 + c] += d_tg[root][c];
          }
        }
        if (t.requires_grad(rotations)) {
          Tensor& gr = t.grad_ref(rotations);
          for (std::size_t id = 0; id < L * J; ++id)
            for (int k = 0; k < 9; ++k) gr[id * 9 + k] += static_cast<float>(d_local[id][k]);
        }
        if (t.requires_grad(rest_joints)) {
          Tensor& gj = t.grad_ref(rest_joints);
          for (std::size_t k = 0; k < J * 3; ++k) gj[k] += static_cast<float>(d_joints[k]);
        }
        if (translation && t.requires_grad(*translation)) {
          Tensor& gtr = t.grad_ref(*translation);
          for (std::size_t k = 0; k < L * 3; ++k) gtr[k] += static_cast<float>(d_trans[k]);
        }
      });
}

Var lbs_op(Var transforms, Var canonical, const Tensor& skin_weights) {
  const Tensor& A = transforms.value();
  const Tensor& P = canonical.value();
  if (skin_weights.rank() != 2) throw DimensionError("lbs_op: skin weights must be [V,J]");
  const std::size_t V = skin_weights.dim(0), J = skin_weights.dim(1);
  if (A.rank() != 2 || A.dim(1) != 12 || A.dim(0) % J != 0 || A.dim(0) == 0) {
    throw DimensionError("lbs_op: transforms must be [L*J,12]");
  }
  const std::size_t L = A.dim(0) / J;
  if (P.rank() != 2 || P.dim(1) != 3 || (P.dim(0) != V && P.dim(0) != L * V)) {
    throw DimensionError("lbs_op: canonical points " + shape_string(P.shape()) + " do not match V=" +
                         std::to_string(V) + ", L=" + std::to_string(L));
  }
  const bool shared = P.dim(0) == V;

  // Blends offsets from the identity, so an identity pose reproduces the input
  // exactly even though weight rows only sum to 1 within float rounding.
  struct Entry {
    std::uint32_t joint;
    float weight;
  };
  std::vector<std::size_t> offsets(V + 1, 0);
  std::vector<Entry> entries;
  for (std::size_t v = 0; v < V; ++v) {
    for (std::size_t j = 0; j < J; ++j) {
      const float w = skin_weights.at(v, j);
      if (w != 0.0f) entries.push_back({std::uint32_t(j), w});
    }
    offsets[v + 1] = entries.size();
  }

  auto blend = [J](const std::vector<std::size_t>& offsets, const std::vector<Entry>& entries, const Tensor& A,
                   std::size_t l, std::size_t v, double* T) {
    std::fill(T, T + 12, 0.0);
    for (std::size_t e = offsets[v]; e < offsets[v + 1]; ++e) {
      const float* a = A.data() + (l * J + entries[e].joint) * 12;
      for (int k = 0; k < 12; ++k) T[k] += double(entries[e].weight) * (double(a[k]) - (k == 0 || k == 4 || k == 8));
    }
  };

  Tensor out(Shape{L * V, 3});
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t v = 0; v < V; ++v) {
      double T[12];
      blend(offsets, entries, A, l, v, T);
      const float* p = P.data() + (shared ? v : l * V + v) * 3;
      for (int r = 0; r < 3; ++r) {
        out[(l * V + v) * 3 + r] =
            static_cast<float>(p[r] + (T[r * 3] * p[0] + T[r * 3 + 1] * p[1] + T[r * 3 + 2] * p[2] + T[9 + r]));
      }
    }
  }
  return transforms.tape()->record(
      std::move(out), {transforms, canonical},
      [transforms, canonical, offsets, entries, L, V, J, shared, blend](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(transforms);
        const Tensor& P = t.value(canonical);
        const bool need_a = t.requires_grad(transforms), need_p = t.requires_grad(canonical);
        std::vector<double> dA(need_a ? L * J * 12 : 0, 0.0);
        std::vector<double> dP(need_p ? P.size() : 0, 0.0);
        for (std::size_t l = 0; l < L; ++l) {
          for (std::size_t v = 0; v < V; ++v) {
            const float* gv = g.data() + (l * V + v) * 3;
            const std::size_t pi = shared ? v : l * V + v;
            const float* p = P.data() + pi * 3;
            if (need_p) {
              double T[12];
              blend(offsets, entries, A, l, v, T);
              for (int c = 0; c < 3; ++c)
                dP[pi * 3 + c] += gv[c] + T[c] * gv[0] + T[3 + c] * gv[1] + T[6 + c] * gv[2];
            }
            if (need_a) {
              double dT[12];
              for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) dT[r * 3 + c] = double(gv[r]) * p[c];
                dT[9 + r] = gv[r];
              }
              for (std::size_t e = offsets[v]; e < offsets[v + 1]; ++e) {
                double* da = dA.data() + (l * J + entries[e].joint) * 12;
                for (int k = 0; k < 12; ++k) da[k] += double(entries[e].weight) * dT[k];
              }
            }
          }
        }
        if (need_a) {
          Tensor& ga = t.grad_ref(transforms);
          for (std::size_t k = 0; k < dA.size(); ++k) ga[k] += static_cast<float>(dA[k]);
        }
        if (need_p) {
          Tensor& gp = t.grad_ref(canonical);
          for (std::size_t k = 0; k < dP.size(); ++k) gp[k] += static_cast<float>(dP[k]);
        }
      });
}

Var shape_vertices_op(const BodyModel& model, Var beta) {
  const std::size_t V = model.num_vertices(), S = model.shape_dims();
  if (beta.value().rank() != 1 || beta.value().size() != S) {
    throw DimensionError("shape coefficients have " + std::to_string(beta.value().size()) + " entries, basis has " +
                         std::to_string(S));
  }
  Tape& tape = *beta.tape();
  Var basis = tape.constant(model.shape_basis.reshaped(Shape{V * 3, S}));
  Var blend = reshape(matmul(basis, reshape(beta, Shape{S, 1})), Shape{V, 3});
  return add(tape.constant(model.template_vertices), blend);
}

Var regress_joints_op(const BodyModel& model, Var vertices) {
  const Tensor& X = vertices.value();
  const Tensor& R = model.joint_regressor;
  const std::size_t V = model.num_vertices(), J = model.num_joints();
  if (X.rank() != 2 || X.dim(1) != 3 || X.dim(0) % V != 0 || X.dim(0) == 0) {
    throw DimensionError("regress_joints: vertices " + shape_string(X.shape()) + " do not match V=" + std::to_string(V));
  }
  const std::size_t L = X.dim(0) / V;
  Tensor out(Shape{L * J, 3});
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t j = 0; j < J; ++j) {
      double acc[3] = {0, 0, 0};
      for (std::size_t v = 0; v < V; ++v) {
        const double w = R[j * V + v];
        if (w == 0.0) continue;
        for (int c = 0; c < 3; ++c) acc[c] += w * X[(l * V + v) * 3 + c];
      }
      for (int c = 0; c < 3; ++c) out[(l * J + j) * 3 + c] = static_cast<float>(acc[c]);
    }
  Tensor regressor = R;
  return vertices.tape()->record(std::move(out), {vertices}, [vertices, regressor, L, V, J](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_ref(vertices);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < J; ++j)
        for (std::size_t v = 0; v < V; ++v) {
          const float w = regressor[j * V + v];
          if (w == 0.0f) continue;
          for (int c = 0; c < 3; ++c) gx[(l * V + v) * 3 + c] += w * g[(l * J + j) * 3 + c];
        }
  });
}

Var pose_sequence(const BodyModel& model, Var rest_joints, Var poses, Var canonical, std::optional<Var> translation) {
  const Tensor& P = poses.value();
  const std::size_t J = model.num_joints();
  if (P.rank() != 2 || P.dim(1) != 3 * J) {
    throw DimensionError("pose sequence must be [L," + std::to_string(3 * J) + "], got " + shape_string(P.shape()));
  }
  const std::size_t L = P.dim(0);
  Var rot = rodrigues_op(reshape(poses, Shape{L * J, 3}));
  Var transforms = fk_op(rot, rest_joints, model.parents, translation);
  return lbs_op(transforms, canonical, model.skin_weights);
}

// ---- plain API -------------------------------------------------------------

Tensor rodrigues(const Tensor& axis_angle) {
  if (axis_angle.size() != 3) throw DimensionError("rodrigues: expected 3 values");
  Tape tape;
  return rodrigues_op(tape.constant(axis_angle.reshaped(Shape{1, 3}))).value().reshaped(Shape{3, 3});
}

Tensor shape_vertices(const BodyModel& model, const Tensor& beta) {
  Tape tape;
  return shape_vertices_op(model, tape.constant(beta)).value();
}

Tensor regress_joints(const Tensor& vertices, const BodyModel& model) {
  if (vertices.shape() != Shape{model.num_vertices(), 3}) {
    throw DimensionError("regress_joints: expected [V,3] vertices");
  }
  Tape tape;
  return regress_joints_op(model, tape.constant(vertices)).value();
}

Tensor forward_kinematics(const Pose& pose, const Tensor& rest_joints, std::span<const int> parents) {
  validate_parents(parents);
  const std::size_t J = parents.size();
  if (pose.theta.size() != 3 * J) throw DimensionError("forward_kinematics: theta must be [J,3]");
  Tape tape;
  if (rest_joints.shape() != Shape{J, 3}) throw DimensionError("forward_kinematics: rest joints must be [J,3]");
  if (!pose.translation.empty() && pose.translation.size() != 3) {
    throw DimensionError("forward_kinematics: translation must have 3 entries");
  }
  const Tensor rot = rodrigues_op(tape.constant(pose.theta.reshaped(Shape{J, 3}))).value();
  const Tensor trans = pose.translation.empty() ? Tensor(Shape{3}) : pose.translation;
  const Frames f = global_frames(std::vector<int>(parents.begin(), parents.end()), 1, rot, rest_joints, &trans);
  Tensor out(Shape{J, 4, 4});
  for (std::size_t i = 0; i < J; ++i) {
    float* m = out.data() + i * 16;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r * 4 + c] = static_cast<float>(f.rg[i][r * 3 + c]);
      m[r * 4 + 3] = static_cast<float>(f.tg[i][r]);
    }
    m[15] = 1.0f;
  }
  return out;
}

Tensor skin_lbs(const BodyModel& model, const Tensor& beta, const Pose& pose,
                const std::optional<Tensor>& canonical_offsets) {
  const std::size_t V = model.num_vertices(), J = model.num_joints();
  if (pose.theta.size() != 3 * J) throw DimensionError("skin_lbs: theta must be [J,3]");
  Tape tape;
  Var shaped = shape_vertices_op(model, tape.constant(beta));
  Var joints = regress_joints_op(model, shaped);
  Var canonical = shaped;
  if (canonical_offsets) {
    if (canonical_offsets->shape() != Shape{V, 3}) throw DimensionError("skin_lbs: offsets must be [V,3]");
    canonical = add(shaped, tape.constant(*canonical_offsets));
  }
  std::optional<Var> trans;
  if (!pose.translation.empty()) trans = tape.constant(pose.translation.reshaped(Shape{1, 3}));
  return pose_sequence(model, joints, tape.constant(pose.theta.reshaped(Shape{1, 3 * J})), canonical, trans).value();
}

double body_height(const BodyModel& model) {
  double lo = 1e30, hi = -1e30;
  for (std::size_t v = 0; v < model.num_vertices(); ++v) {
    lo = std::min(lo, double(model.template_vertices.at(v, 1)));
    hi = std::max(hi, double(model.template_vertices.at(v, 1)));
  }
  return hi - lo;
}

// ---- toy model ---------------------------------------------------------------

namespace {

using Vec3 = std::array<double, 3>;

Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (a + t * ab));
}

struct Skeleton {
  std::vector<int> parents;
  std::vector<Vec3> joints;
  std::vector<double> radius;  // capsule radius of the bone ending at each joint
};

Skeleton smpl_like_skeleton() {
  Skeleton s;
  s.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  s.joints = {{0.0, 0.0, 0.0},     {0.07, -0.09, 0.0},  {-0.07, -0.09, 0.0}, {0.0, 0.11, 0.0},
              {0.10, -0.47, 0.0},  {-0.10, -0.47, 0.0}, {0.0, 0.24, 0.0},    {0.09, -0.87, 0.0},
              {-0.09, -0.87, 0.0}, {0.0, 0.30, 0.0},    {0.11, -0.93, 0.12}, {-0.11, -0.93, 0.12},
              {0.0, 0.51, 0.0},    {0.08, 0.42, 0.0},   {-0.08, 0.42, 0.0},  {0.0, 0.66, 0.03},
              {0.19, 0.44, 0.0},   {-0.19, 0.44, 0.0},  {0.45, 0.44, 0.0},   {-0.45, 0.44, 0.0},
              {0.70, 0.44, 0.0},   {-0.70, 0.44, 0.0},  {0.79, 0.44, 0.0},   {-0.79, 0.44, 0.0}};
  s.radius = {0.14, 0.12, 0.12, 0.14, 0.08, 0.08, 0.14, 0.06, 0.06, 0.15, 0.05, 0.05,
              0.07, 0.09, 0.09, 0.10, 0.07, 0.07, 0.06, 0.06, 0.05, 0.05, 0.05, 0.05};
  return s;
}

Skeleton procedural_skeleton(std::size_t J, std::mt19937_64& rng) {
  Skeleton s;
  s.parents.resize(J);
  s.joints.resize(J);
  s.radius.assign(J, 0.06);
  s.parents[0] = -1;
  s.joints[0] = {0, 0, 0};
  s.radius[0] = 0.1;
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t i = 1; i < J; ++i) {
    s.parents[i] = int((i - 1) / 2);
    Vec3 dir{n01(rng), n01(rng), 0.3 * n01(rng)};
    const double len = norm(dir);
    dir = (0.18 / (len > 1e-9 ? len : 1.0)) * dir;
    s.joints[i] = s.joints[std::size_t(s.parents[i])] + dir;
  }
  return s;
}

// Ring counts for a genus-0 surface with two poles and `m` ring vertices.
std::vector<std::size_t> ring_layout(std::size_t m) {
  std::size_t rings = std::max<std::size_t>(1, std::size_t(std::lround(std::sqrt(double(m) / 2.0))));
  rings = std::min(rings, m / 3);
  std::vector<double> w(rings);
  double total = 0.0;
  for (std::size_t k = 0; k < rings; ++k) {
    w[k] = std::sin(kPi * double(k + 1) / double(rings + 1));
    total += w[k];
  }
  std::vector<std::size_t> counts(rings);
  std::size_t used = 0;
  for (std::size_t k = 0; k < rings; ++k) {
    counts[k] = std::max<std::size_t>(3, std::size_t(std::floor(double(m) * w[k] / total)));
    used += counts[k];
  }
  // Settle the remainder on the widest rings first.
  std::vector<std::size_t> order(rings);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  for (std::size_t i = 0; used < m; i = (i + 1) % rings, ++used) ++counts[order[i]];
  for (std::size_t i = 0; used > m; i = (i + 1) % rings) {
    if (counts[order[i]] > 3) {
      --counts[order[i]];
      --used;
    }
  }
  return counts;
}

}  // namespace

BodyModel make_toy_model(std::size_t J, std::size_t V, std::size_t S, std::uint64_t seed) {
  if (J < 2) throw ConfigError("toy model needs at least 2 joints");
  if (V < J || V < 5) throw ConfigError("toy model needs V >= J and V >= 5");
  std::mt19937_64 rng(seed);
  Skeleton sk = J == 24 ? smpl_like_skeleton() : procedural_skeleton(J, rng);

  Vec3 center{0, 0, 0};
  for (const Vec3& j : sk.joints) center = center + j;
  center = (1.0 / double(J)) * center;

  auto inside_radius = [&](const Vec3& p) {
    double best = -1e30;
    for (std::size_t i = 0; i < J; ++i) {
      const Vec3& a = sk.joints[i];
      const Vec3& b = i == 0 ? sk.joints[0] : sk.joints[std::size_t(sk.parents[i])];
      best = std::max(best, sk.radius[i] - segment_distance(p, a, b));
    }
    return best;  // > 0 when p is inside some bone capsule
  };

  // Sphere-topology vertex directions, then a star-shaped radial profile.
  const std::vector<std::size_t> rings = ring_layout(V - 2);
  std::vector<Vec3> dirs;
  dirs.push_back({0, 1, 0});
  for (std::size_t k = 0; k < rings.size(); ++k) {
    const double phi = kPi * double(k + 1) / double(rings.size() + 1);
    for (std::size_t i = 0; i < rings[k]; ++i) {
      const double az = 2.0 * kPi * (double(i) + 0.5 * double(k % 2)) / double(rings[k]);
      dirs.push_back({std::sin(phi) * std::cos(az), std::cos(phi), std::sin(phi) * std::sin(az)});
    }
  }
  dirs.push_back({0, -1, 0});

  Tensor tmpl(Shape{V, 3});
  for (std::size_t v = 0; v < V; ++v) {
    double r = 0.03;
    for (double t = 0.0; t <= 2.0; t += 0.004)
      if (inside_radius(center + t * dirs[v]) > 0.0) r = std::max(r, t);
    const Vec3 p = center + r * dirs[v];
    for (int c = 0; c < 3; ++c) tmpl.at(v, c) = static_cast<float>(p[c]);
  }

  // Faces: pole fans plus zipper strips between consecutive rings.
  std::vector<Face> faces;
  std::vector<std::size_t> ring_start;
  std::size_t idx = 1;
  for (std::size_t n : rings) {
    ring_start.push_back(idx);
    idx += n;
  }
  auto ring_vertex = [&](std::size_t k, std::size_t i) {
    return std::uint32_t(ring_start[k] + i % rings[k]);
  };
  for (std::size_t i = 0; i < rings[0]; ++i) faces.push_back({0, ring_vertex(0, i + 1), ring_vertex(0, i)});
  for (std::size_t k = 0; k + 1 < rings.size(); ++k) {
    const std::size_t na = rings[k], nb = rings[k + 1];
    const double oa = 0.5 * double(k % 2) / double(na), ob = 0.5 * double((k + 1) % 2) / double(nb);
    std::size_t i = 0, j = 0;
    while (i < na || j < nb) {
      const double ua = double(i + 1) / double(na) + oa, ub = double(j + 1) / double(nb) + ob;
      if (j >= nb || (i < na && ua <= ub)) {
        faces.push_back({ring_vertex(k, i), ring_vertex(k, i + 1), ring_vertex(k + 1, j)});
        ++i;
      } else {
        faces.push_back({ring_vertex(k, i), ring_vertex(k + 1, j + 1), ring_vertex(k + 1, j)});
        ++j;
      }
    }
  }
  const std::size_t last = rings.size() - 1;
  const std::uint32_t bottom = std::uint32_t(V - 1);
  for (std::size_t i = 0; i < rings[last]; ++i) faces.push_back({bottom, ring_vertex(last, i), ring_vertex(last, i + 1)});

  // Orient outward: the enclosed signed volume must be positive.
  double volume = 0.0;
  for (const Face& f : faces) {
    Vec3 p[3];
    for (int c = 0; c < 3; ++c) p[c] = {tmpl.at(f[c], 0), tmpl.at(f[c], 1), tmpl.at(f[c], 2)};
    volume += dot(p[0], Vec3{p[1][1] * p[2][2] - p[1][2] * p[2][1], p[1][2] * p[2][0] - p[1][0] * p[2][2],
                             p[1][0] * p[2][1] - p[1][1] * p[2][0]});
  }
  if (volume < 0.0)
    for (Face& f : faces) std::swap(f[1], f[2]);

  // Joint regressor: inverse-distance weights over the nearest vertices.
  const std::size_t k_near = std::min<std::size_t>(V, 6);
  Tensor regressor(Shape{J, V});
  for (std::size_t j = 0; j < J; ++j) {
    std::vector<std::pair<double, std::size_t>> d(V);
    for (std::size_t v = 0; v < V; ++v) {
      d[v] = {norm(Vec3{tmpl.at(v, 0), tmpl.at(v, 1), tmpl.at(v, 2)} - sk.joints[j]), v};
    }
    std::partial_sort(d.begin(), d.begin() + std::ptrdiff_t(k_near), d.end());
    double total = 0.0;
    for (std::size_t k = 0; k < k_near; ++k) total += 1.0 / (d[k].first + 1e-3);
    for (std::size_t k = 0; k < k_near; ++k) {
      regressor.at(j, d[k].second) = static_cast<float>((1.0 / (d[k].first + 1e-3)) / total);
    }
  }

  BodyModel model;
  model.template_vertices = tmpl;
  model.joint_regressor = regressor;
  model.parents = sk.parents;
  model.faces = std::move(faces);
  model.shape_basis = Tensor(Shape{V, 3, S});
  model.skin_weights = Tensor(Shape{V, J});
  // Placeholder weights so regress_joints works before real weights exist.
  const Tensor rest = regress_joints(tmpl, BodyModel{tmpl, model.shape_basis, regressor,
                                                        Tensor(Shape{V, J}), sk.parents, {}});

  // Skin weights: Gaussian falloff from each joint's child bones, top 4 kept.
  const std::vector<bool> leaf = model.leaf_joints();
  const double sigma = 0.06;
  for (std::size_t v = 0; v < V; ++v) {
    const Vec3 p{tmpl.at(v, 0), tmpl.at(v, 1), tmpl.at(v, 2)};
    std::vector<double> dist(J, 1e30);
    for (std::size_t j = 0; j < J; ++j) {
      const Vec3 a{rest.at(j, 0), rest.at(j, 1), rest.at(j, 2)};
      if (leaf[j]) dist[j] = norm(p - a);
      for (std::size_t c = 1; c < J; ++c) {
        if (std::size_t(sk.parents[c]) != j) continue;
        const Vec3 b{rest.at(c, 0), rest.at(c, 1), rest.at(c, 2)};
        dist[j] = std::min(dist[j], segment_distance(p, a, b));
      }
    }
    const double dmin = *std::min_element(dist.begin(), dist.end());
    std::vector<std::pair<double, std::size_t>> w(J);
    for (std::size_t j = 0; j < J; ++j) w[j] = {std::exp(-(dist[j] * dist[j] - dmin * dmin) / (sigma * sigma)), j};
    std::partial_sort(w.begin(), w.begin() + std::ptrdiff_t(std::min<std::size_t>(4, J)), w.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    const std::size_t keep = std::min<std::size_t>(4, J);
    double total = 0.0;
    for (std::size_t k = 0; k < keep; ++k) total += w[k].first;
    for (std::size_t k = 0; k < keep; ++k) model.skin_weights.at(v, w[k].second) = static_cast<float>(w[k].first / total);
    // Renormalize in float so rows sum to 1 within rounding.
    double s = 0.0;
    for (std::size_t j = 0; j < J; ++j) s += model.skin_weights.at(v, j);
    for (std::size_t j = 0; j < J; ++j) model.skin_weights.at(v, j) = static_cast<float>(model.skin_weights.at(v, j) / s);
  }

  // Shape basis: smooth radial fields, affine in the vertex position.
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t s = 0; s < S; ++s) {
    const double c0 = n01(rng), c1 = n01(rng), c2 = n01(rng), c3 = n01(rng);
    const double amp = 0.02 / (1.0 + 0.3 * double(s));
    for (std::size_t v = 0; v < V; ++v) {
      const Vec3 p = Vec3{tmpl.at(v, 0), tmpl.at(v, 1), tmpl.at(v, 2)} - center;
      const double len = norm(p);
      const Vec3 n = len > 1e-9 ? (1.0 / len) * p : Vec3{0, 1, 0};
      const double phi = c0 + c1 * p[0] + c2 * p[1] + c3 * p[2];
      for (int c = 0; c < 3; ++c) model.shape_basis[(v * 3 + c) * S + s] = static_cast<float>(amp * phi * n[c]);
    }
  }
  model.validate();
  return model;
}

}  // namespace h4d

namespace h4d {

void store_body_model(const BodyModel& model, TensorArchive& archive, const std::string& prefix) {
  model.validate();
  archive.put(prefix + "template", model.template_vertices);
  archive.put(prefix + "shape_basis", model.shape_basis);
  archive.put(prefix + "joint_regressor", model.joint_regressor);
  archive.put(prefix + "skin_weights", model.skin_weights);
  Tensor parents(Shape{model.parents.size()});
  for (std::size_t j = 0; j < model.parents.size(); ++j) parents[j] = float(model.parents[j]);
  archive.put(prefix + "parents", std::move(parents));
  Tensor faces(Shape{model.faces.size(), 3});
  for (std::size_t f = 0; f < model.faces.size(); ++f)
    for (int k = 0; k < 3; ++k) faces.at(f, k) = float(model.faces[f][k]);
  archive.put(prefix + "faces", std::move(faces));
}

BodyModel load_body_model(const TensorArchive& archive, const std::string& prefix) {
  BodyModel m;
  m.template_vertices = archive.get(prefix + "template");
  m.shape_basis = archive.get(prefix + "shape_basis");
  m.joint_regressor = archive.get(prefix + "joint_regressor");
  m.skin_weights = archive.get(prefix + "skin_weights");
  for (float p : archive.get(prefix + "parents").values()) {
    if (p != std::floor(p)) throw ConfigError("model parents must hold integers");
    m.parents.push_back(int(p));
  }
  const Tensor& faces = archive.get(prefix + "faces");
  if (faces.rank() != 2 || faces.dim(1) != 3) throw DimensionError("model faces must be [F,3]");
  for (std::size_t f = 0; f < faces.dim(0); ++f) {
    Face face{};
    for (int k = 0; k < 3; ++k) {
      const float v = faces.at(f, k);
      if (v < 0 || v != std::floor(v)) throw ConfigError("model faces must hold nonnegative integers");
      face[k] = std::uint32_t(v);
    }
    m.faces.push_back(face);
  }
  m.validate();
  return m;
}

}  // namespace h4d
