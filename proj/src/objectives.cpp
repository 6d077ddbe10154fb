#include "h4d/objectives.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace h4d {

namespace {

void require_points(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.dim(1) != 3) throw DimensionError(std::string(what) + ": expected [N,3], got " + shape_string(t.shape()));
  if (t.dim(0) == 0) throw DimensionError(std::string(what) + ": empty point set");
}

double norm3(double x, double y, double z) { return std::sqrt(x * x + y * y + z * z); }

Var add_term(std::optional<Var> acc, Var term) { return acc ? add(*acc, term) : term; }

}  // namespace

// ---- training losses -------------------------------------------------------

LossWeights LossWeights::stage_preset(int stage) {
  if (stage == 1) return {1.0, 1.0, 0.0, 0.0};
  if (stage == 2) return {1.0, 0.0, 1.0, 30.0};
  throw ConfigError("stage must be 1 or 2, got " + std::to_string(stage));
}

double vertex_l1(const Tensor& X, const Tensor& Y) {
  require_same_shape(X, Y, "vertex_l1");
  require_points(X, "vertex_l1");
  double total = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) total += std::abs(double(X[i]) - double(Y[i]));
  return total / double(X.dim(0));
}

Var vertex_l1_op(Var X, Var Y) {
  require_same_shape(X.value(), Y.value(), "vertex_l1");
  require_points(X.value(), "vertex_l1");
  const std::size_t rows = X.value().dim(0);
  return X.tape()->record(Tensor::scalar(static_cast<float>(vertex_l1(X.value(), Y.value()))), {X, Y},
                          [X, Y, rows](Tape& t, const Tensor& g) {
                            const Tensor& a = t.value(X);
                            const Tensor& b = t.value(Y);
                            const float s = g[0] / float(rows);
                            const bool gx = t.requires_grad(X), gy = t.requires_grad(Y);
                            Tensor* dx = gx ? &t.grad_ref(X) : nullptr;
                            Tensor* dy = gy ? &t.grad_ref(Y) : nullptr;
                            for (std::size_t i = 0; i < a.size(); ++i) {
                              const float d = a[i] - b[i];
                              const float sg = d > 0 ? s : (d < 0 ? -s : 0.0f);
                              if (dx) (*dx)[i] += sg;
                              if (dy) (*dy)[i] -= sg;
                            }
                          });
}

double shape_l2(const Tensor& c, const Tensor& c_star) {
  if (c.size() != c_star.size()) throw DimensionError("shape_l2: code sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += (double(c[i]) - c_star[i]) * (double(c[i]) - c_star[i]);
  return s;
}

Var shape_l2_op(Var c, Var c_star) {
  if (c.value().size() != c_star.value().size()) throw DimensionError("shape_l2: code sizes differ");
  return sum(square(sub(c, reshape(c_star, c.value().shape()))));
}

Var total_loss(int stage, const StageOutputs& out, const StageTargets& target, const LossWeights& w) {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2, got " + std::to_string(stage));
  if (w.shape < 0 || w.linear_body < 0 || w.motion_body < 0 || w.offsets < 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  auto need = [&](const std::optional<Var>& v, const char* name) -> Var {
    if (!v) throw ConfigError(std::string("stage ") + std::to_string(stage) + " loss needs output '" + name + "'");
    return *v;
  };
  std::optional<Var> acc;
  Tape* tape = nullptr;
  for (const auto* v : {&out.shape_code, &out.body_linear, &out.body_motion, &out.offsets})
    if (*v) tape = v->value().tape();
  if (!tape) throw ConfigError("total_loss: no outputs given");
  if (w.shape > 0) {
    acc = add_term(acc, scale(shape_l2_op(need(out.shape_code, "shape_code"), tape->constant(target.beta)), float(w.shape)));
  }
  if (stage == 1 && w.linear_body > 0) {
    Var x = need(out.body_linear, "body_linear");
    acc = add_term(acc, scale(vertex_l1_op(x, tape->constant(target.body)), float(w.linear_body)));
  }
  if (stage == 2) {
    Var xm = need(out.body_motion, "body_motion");
    Var xs = need(out.offsets, "offsets");
    if (w.linear_body > 0 && out.body_linear) {
      acc = add_term(acc, scale(vertex_l1_op(*out.body_linear, tape->constant(target.body)), float(w.linear_body)));
    }
    if (w.motion_body > 0) acc = add_term(acc, scale(vertex_l1_op(xm, tape->constant(target.body)), float(w.motion_body)));
    if (w.offsets > 0) acc = add_term(acc, scale(vertex_l1_op(xs, tape->constant(target.offsets)), float(w.offsets)));
  }
  return acc ? *acc : tape->constant(Tensor::scalar(0.0f));
}

// ---- surface sampling --------------------------------------------------------

SurfaceSamples sample_surface(const Tensor& vertices, const std::vector<Face>& faces, std::size_t n, std::uint64_t seed) {
  require_points(vertices, "sample_surface");
  if (faces.empty()) throw ConfigError("sample_surface: mesh has no faces");
  std::vector<double> cumulative(faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (auto i : faces[f])
      if (i >= vertices.dim(0)) throw DimensionError("sample_surface: face index out of range");
    const Point3 a = point_row(vertices, faces[f][0]), b = point_row(vertices, faces[f][1]),
                 c = point_row(vertices, faces[f][2]);
    const double u[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]}, v[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    total += 0.5 * norm3(u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]);
    cumulative[f] = total;
  }
  if (!(total > 0.0)) throw ConfigError("sample_surface: mesh has zero area");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SurfaceSamples s{std::vector<std::uint32_t>(n), Tensor(Shape{n, 3}), Tensor(Shape{n, 3})};
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = unit(rng) * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    const std::size_t f = std::min<std::size_t>(std::size_t(it - cumulative.begin()), faces.size() - 1);
    const double r1 = std::sqrt(unit(rng)), r2 = unit(rng);
    const double w[3] = {1.0 - r1, r1 * (1.0 - r2), r1 * r2};
    s.face[i] = std::uint32_t(f);
    for (int k = 0; k < 3; ++k) s.bary.at(i, k) = static_cast<float>(w[k]);
    for (int c = 0; c < 3; ++c) {
      double p = 0.0;
      for (int k = 0; k < 3; ++k) p += w[k] * vertices.at(faces[f][k], c);
      s.points.at(i, c) = static_cast<float>(p);
    }
  }
  return s;
}

Var interpolate_surface(Var vertices, const std::vector<Face>& faces, const SurfaceSamples& samples, std::size_t frames) {
  const Tensor& X = vertices.value();
  if (frames == 0 || X.rank() != 2 || X.dim(1) != 3 || X.dim(0) % frames != 0) {
    throw DimensionError("interpolate_surface: vertices do not split into frames");
  }
  const std::size_t V = X.dim(0) / frames, n = samples.face.size();
  std::vector<std::array<std::uint32_t, 3>> corners(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (samples.face[i] >= faces.size()) throw DimensionError("interpolate_surface: face index out of range");
    corners[i] = faces[samples.face[i]];
    for (auto c : corners[i])
      if (c >= V) throw DimensionError("interpolate_surface: vertex index out of range");
  }
  const Tensor bary = samples.bary;
  Tensor out(Shape{frames * n, 3});
  for (std::size_t l = 0; l < frames; ++l)
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) {
        double p = 0.0;
        for (int k = 0; k < 3; ++k) p += double(bary.at(i, k)) * X.at(l * V + corners[i][k], c);
        out.at(l * n + i, c) = static_cast<float>(p);
      }
  return vertices.tape()->record(std::move(out), {vertices}, [vertices, corners, bary, frames, V, n](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_ref(vertices);
    for (std::size_t l = 0; l < frames; ++l)
      for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k)
          for (int c = 0; c < 3; ++c) gx.at(l * V + corners[i][k], c) += bary.at(i, k) * g.at(l * n + i, c);
  });
}

// ---- geometric distances -------------------------------------------------------

namespace {

struct ChamferMatch {
  std::vector<std::size_t> a_to_b, b_to_a;
  std::vector<double> d_ab, d_ba;
  double value = 0.0;
};

ChamferMatch chamfer_match(const Tensor& a, const Tensor& b) {
  require_points(a, "chamfer");
  require_points(b, "chamfer");
  const KdTree ta(a), tb(b);
  ChamferMatch m;
  const std::size_t na = a.dim(0), nb = b.dim(0);
  m.a_to_b.resize(na);
  m.d_ab.resize(na);
  m.b_to_a.resize(nb);
  m.d_ba.resize(nb);
  double sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    double d2;
    m.a_to_b[i] = tb.nearest(point_row(a, i), &d2);
    m.d_ab[i] = std::sqrt(d2);
    sa += m.d_ab[i];
  }
  for (std::size_t j = 0; j < nb; ++j) {
    double d2;
    m.b_to_a[j] = ta.nearest(point_row(b, j), &d2);
    m.d_ba[j] = std::sqrt(d2);
    sb += m.d_ba[j];
  }
  m.value = 0.5 * sa / double(na) + 0.5 * sb / double(nb);
  return m;
}

}  // namespace

double chamfer(const Tensor& a, const Tensor& b) { return chamfer_match(a, b).value; }

Var chamfer_op(Var a, const Tensor& b) {
  ChamferMatch m = chamfer_match(a.value(), b);
  const float value = static_cast<float>(m.value);
  return a.tape()->record(Tensor::scalar(value), {a}, [a, b, m = std::move(m)](Tape& t, const Tensor& g) {
    const Tensor& A = t.value(a);
    Tensor& ga = t.grad_ref(a);
    const double na = double(A.dim(0)), nb = double(b.dim(0));
    auto push = [&](std::size_t i, std::size_t j, double d, double w) {
      if (d <= 0.0) return;
      for (int c = 0; c < 3; ++c) ga.at(i, c) += static_cast<float>(w * (double(A.at(i, c)) - b.at(j, c)) / d);
    };
    for (std::size_t i = 0; i < m.a_to_b.size(); ++i) push(i, m.a_to_b[i], m.d_ab[i], 0.5 * g[0] / na);
    for (std::size_t j = 0; j < m.b_to_a.size(); ++j) push(m.b_to_a[j], j, m.d_ba[j], 0.5 * g[0] / nb);
  });
}

double point_to_surface(const Tensor& points, const Tensor& vertices, const std::vector<Face>& faces) {
  require_points(points, "point_to_surface");
  const TriangleBvh bvh(vertices, faces);
  double total = 0.0;
  for (std::size_t i = 0; i < points.dim(0); ++i) total += std::sqrt(bvh.closest(point_row(points, i)).dist2);
  return total / double(points.dim(0));
}

Var point_to_surface_op(const Tensor& points, Var vertices, const std::vector<Face>& faces) {
  require_points(points, "point_to_surface");
  const TriangleBvh bvh(vertices.value(), faces);
  const std::size_t n = points.dim(0);
  std::vector<ClosestPoint> hits(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    hits[i] = bvh.closest(point_row(points, i));
    total += std::sqrt(hits[i].dist2);
  }
  const float value = static_cast<float>(total / double(n));
  return vertices.tape()->record(
      Tensor::scalar(value), {vertices}, [vertices, points, faces, hits = std::move(hits), n](Tape& t, const Tensor& g) {
        Tensor& gv = t.grad_ref(vertices);
        for (std::size_t i = 0; i < n; ++i) {
          const ClosestPoint& h = hits[i];
          const double d = std::sqrt(h.dist2);
          if (d <= 0.0) continue;
          const Face& f = faces[h.face];
          for (int c = 0; c < 3; ++c) {
            const double dir = (h.point[std::size_t(c)] - points.at(i, std::size_t(c))) / d;
            for (int k = 0; k < 3; ++k) gv.at(f[k], c) += static_cast<float>(g[0] / double(n) * h.bary[k] * dir);
          }
        }
      });
}

// ---- pose metrics ---------------------------------------------------------------

JointMetrics mpjpe_family(const Tensor& pred, const Tensor& gt, std::size_t frames) {
  if (pred.size() != gt.size()) throw DimensionError("mpjpe: shapes differ");
  if (frames == 0 || pred.size() % (3 * frames) != 0 || pred.size() == 0) {
    throw DimensionError("mpjpe: joints do not split into frames");
  }
  const std::size_t J = pred.size() / (3 * frames);
  auto at = [J](const Tensor& t, std::size_t l, std::size_t j, int c) { return double(t[(l * J + j) * 3 + std::size_t(c)]); };
  JointMetrics m;
  for (std::size_t l = 0; l < frames; ++l) {
    Eigen::Matrix3Xd P(3, J), G(3, J);
    double err = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      for (int c = 0; c < 3; ++c) {
        P(c, Eigen::Index(j)) = at(pred, l, j, c);
        G(c, Eigen::Index(j)) = at(gt, l, j, c);
      }
      err += (P.col(Eigen::Index(j)) - G.col(Eigen::Index(j))).norm();
    }
    m.mpjpe += err / double(J);
    const Eigen::Matrix4d T = Eigen::umeyama(P, G, true);
    const Eigen::Matrix3Xd aligned = (T.topLeftCorner<3, 3>() * P).colwise() + T.topRightCorner<3, 1>();
    m.pa_mpjpe += (aligned - G).colwise().norm().mean();
  }
  m.mpjpe /= double(frames);
  m.pa_mpjpe /= double(frames);
  if (frames >= 3) {
    double acc = 0.0;
    for (std::size_t l = 1; l + 1 < frames; ++l)
      for (std::size_t j = 0; j < J; ++j) {
        double d[3];
        for (int c = 0; c < 3; ++c) {
          const double ap = at(pred, l - 1, j, c) - 2.0 * at(pred, l, j, c) + at(pred, l + 1, j, c);
          const double ag = at(gt, l - 1, j, c) - 2.0 * at(gt, l, j, c) + at(gt, l + 1, j, c);
          d[c] = ap - ag;
        }
        acc += norm3(d[0], d[1], d[2]);
      }
    m.accel = acc / double((frames - 2) * J);
  }
  return m;
}

double pve(const Tensor& pred, const Tensor& gt) {
  require_same_shape(pred, gt, "pve");
  if (pred.size() == 0 || pred.size() % 3 != 0) throw DimensionError("pve: expected 3-vectors");
  const std::size_t n = pred.size() / 3;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    total += norm3(double(pred[3 * i]) - gt[3 * i], double(pred[3 * i + 1]) - gt[3 * i + 1],
                   double(pred[3 * i + 2]) - gt[3 * i + 2]);
  return total / double(n);
}

// ---- volumetric IoU -------------------------------------------------------------

bool is_watertight(const std::vector<Face>& faces) {
  if (faces.empty()) return false;
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
  for (const Face& f : faces)
    for (int k = 0; k < 3; ++k) ++directed[{f[k], f[(k + 1) % 3]}];
  for (const auto& [e, count] : directed) {
    if (count != 1) return false;
    const auto it = directed.find({e.second, e.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return true;
}

VoxelGrid union_grid(const Tensor& verts_a, const Tensor& verts_b, std::size_t resolution) {
  require_points(verts_a, "volumetric_iou");
  require_points(verts_b, "volumetric_iou");
  if (resolution == 0) throw ConfigError("voxel resolution must be positive");
  Point3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const Tensor* t : {&verts_a, &verts_b})
    for (std::size_t i = 0; i < t->dim(0); ++i)
      for (int c = 0; c < 3; ++c) {
        lo[c] = std::min(lo[c], double(t->at(i, c)));
        hi[c] = std::max(hi[c], double(t->at(i, c)));
      }
  VoxelGrid g;
  g.resolution = resolution;
  for (int c = 0; c < 3; ++c) {
    const double extent = std::max(hi[c] - lo[c], 1e-9);
    const double pad = 0.05 * extent;
    g.lo[c] = lo[c] - pad;
    g.step[c] = (extent + 2.0 * pad) / double(resolution);
  }
  return g;
}

std::vector<std::uint8_t> voxelize(const Tensor& vertices, const std::vector<Face>& faces, const VoxelGrid& grid) {
  const std::size_t R = grid.resolution;
  // Crossings of the +x line through each (y,z) voxel-centre row.
  std::vector<std::vector<std::pair<double, int>>> rows(R * R);
  for (const Face& f : faces) {
    Point3 p[3];
    for (int k = 0; k < 3; ++k) p[k] = point_row(vertices, f[k]);
    // Projected signed area in (y,z) equals the x component of the face normal.
    double area = (p[1][1] - p[0][1]) * (p[2][2] - p[0][2]) - (p[1][2] - p[0][2]) * (p[2][1] - p[0][1]);
    if (area == 0.0) continue;
    int sign = 1;
    if (area < 0) {
      std::swap(p[1], p[2]);
      area = -area;
      sign = -1;
    }
    double ylo = 1e300, yhi = -1e300, zlo = 1e300, zhi = -1e300;
    for (const Point3& v : p) {
      ylo = std::min(ylo, v[1]);
      yhi = std::max(yhi, v[1]);
      zlo = std::min(zlo, v[2]);
      zhi = std::max(zhi, v[2]);
    }
    auto index_range = [R](double lo, double hi, double origin, double step) {
      const double a = std::ceil((lo - origin) / step - 0.5), b = std::floor((hi - origin) / step - 0.5);
      return std::pair<long, long>{std::max(0L, long(a)), std::min(long(R) - 1, long(b))};
    };
    const auto [j0, j1] = index_range(ylo, yhi, grid.lo[1], grid.step[1]);
    const auto [k0, k1] = index_range(zlo, zhi, grid.lo[2], grid.step[2]);
    for (long k = k0; k <= k1; ++k) {
      const double qz = grid.lo[2] + (double(k) + 0.5) * grid.step[2];
      for (long j = j0; j <= j1; ++j) {
        const double qy = grid.lo[1] + (double(j) + 0.5) * grid.step[1];
        double w[3];
        bool inside = true;
        for (int e = 0; e < 3 && inside; ++e) {
          const Point3& a = p[(e + 1) % 3];
          const Point3& b = p[(e + 2) % 3];
          const double dy = b[1] - a[1], dz = b[2] - a[2];
          w[e] = dy * (qz - a[2]) - dz * (qy - a[1]);
          // Points exactly on an edge belong to the triangle on the edge's
          // top-left side, so shared edges are counted once.
          const bool top_left = dz < 0 || (dz == 0 && dy > 0);
          inside = w[e] > 0 || (w[e] == 0 && top_left);
        }
        if (!inside) continue;
        const double x = (w[0] * p[0][0] + w[1] * p[1][0] + w[2] * p[2][0]) / area;
        rows[std::size_t(k) * R + std::size_t(j)].push_back({x, sign});
      }
    }
  }
  std::vector<std::uint8_t> occ(R * R * R, 0);
  for (std::size_t k = 0; k < R; ++k)
    for (std::size_t j = 0; j < R; ++j) {
      auto& cr = rows[k * R + j];
      if (cr.empty()) continue;
      std::sort(cr.begin(), cr.end());
      int winding = 0;  // sum of signs of crossings with x beyond the current centre
      for (const auto& c : cr) winding += c.second;
      std::size_t next = 0;
      for (std::size_t i = 0; i < R; ++i) {
        const double x = grid.lo[0] + (double(i) + 0.5) * grid.step[0];
        while (next < cr.size() && cr[next].first <= x) winding -= cr[next++].second;
        occ[(k * R + j) * R + i] = winding != 0;
      }
    }
  return occ;
}

IouResult volumetric_iou(const Tensor& verts_a, const std::vector<Face>& faces_a, const Tensor& verts_b,
                         const std::vector<Face>& faces_b, std::size_t resolution) {
  const VoxelGrid grid = union_grid(verts_a, verts_b, resolution);
  IouResult r;
  r.watertight = is_watertight(faces_a) && is_watertight(faces_b);
  const auto a = voxelize(verts_a, faces_a, grid), b = voxelize(verts_b, faces_b, grid);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]);
    uni += (a[i] || b[i]);
  }
  r.iou = uni == 0 ? 0.0 : double(inter) / double(uni);
  return r;
}

// ---- priors ------------------------------------------------------------------------

double motion_energy(const Tensor& c_m, const std::vector<double>& eigenvalues) {
  if (c_m.size() != eigenvalues.size()) throw DimensionError("motion_energy: code and eigenvalue counts differ");
  double e = 0.0;
  for (std::size_t i = 0; i < c_m.size(); ++i)
    if (eigenvalues[i] > 0) e += double(c_m[i]) * c_m[i] / eigenvalues[i];
  return e;
}

Var prior_terms(Var c_s, Var c_m, Var c_a, const std::vector<double>& eigenvalues, const PriorWeights& w) {
  if (c_m.value().size() != eigenvalues.size()) throw DimensionError("prior_terms: code and eigenvalue counts differ");
  Tape& tape = *c_s.tape();
  Tensor inv(c_m.value().shape());
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = eigenvalues[i] > 0 ? static_cast<float>(1.0 / eigenvalues[i]) : 0.0f;
  Var shape = scale(sum(square(c_s)), float(w.shape));
  Var aux = scale(sum(square(c_a)), float(w.auxiliary));
  if (inv.size() == 0) return add(shape, aux);
  Var motion = scale(sum(mul(square(c_m), tape.constant(inv))), float(w.motion));
  return add(add(shape, motion), aux);
}

}  // namespace h4d
