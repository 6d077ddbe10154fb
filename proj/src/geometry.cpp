#include "h4d/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace h4d {

namespace {

Point3 sub(const Point3& a, const Point3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Point3& a, const Point3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double dist2(const Point3& a, const Point3& b) {
  const Point3 d = sub(a, b);
  return dot(d, d);
}

double box_dist2(const Point3& p, const Point3& lo, const Point3& hi) {
  double d = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double e = std::max({lo[k] - p[k], 0.0, p[k] - hi[k]});
    d += e * e;
  }
  return d;
}

constexpr std::uint32_t kLeafSize = 8;

}  // namespace

Point3 point_row(const Tensor& t, std::size_t r) { return {t.at(r, 0), t.at(r, 1), t.at(r, 2)}; }

// ---- KdTree ----------------------------------------------------------------

KdTree::KdTree(const Tensor& points) {
  if (points.rank() != 2 || points.dim(1) != 3) throw DimensionError("KdTree: points must be [N,3]");
  if (points.dim(0) == 0) throw DimensionError("KdTree: empty point set");
  pts_.resize(points.dim(0));
  for (std::size_t i = 0; i < pts_.size(); ++i) pts_[i] = point_row(points, i);
  order_.resize(pts_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  build(0, std::uint32_t(pts_.size()));
}

int KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const int id = int(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;
  Point3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (std::uint32_t i = begin; i < end; ++i)
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], pts_[order_[i]][k]);
      hi[k] = std::max(hi[k], pts_[order_[i]][k]);
    }
  int axis = 0;
  for (int k = 1; k < 3; ++k)
    if (hi[k] - lo[k] > hi[axis] - lo[axis]) axis = k;
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return pts_[a][axis] < pts_[b][axis] || (pts_[a][axis] == pts_[b][axis] && a < b);
                   });
  const double split = pts_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int id, const Point3& q, std::size_t& best, double& best_d2) const {
  const Node& n = nodes_[std::size_t(id)];
  if (n.left < 0) {
    for (std::uint32_t i = n.begin; i < n.end; ++i) {
      const std::uint32_t idx = order_[i];
      const double d = dist2(q, pts_[idx]);
      if (d < best_d2 || (d == best_d2 && idx < best)) {
        best_d2 = d;
        best = idx;
      }
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const int near = diff < 0 ? n.left : n.right, far = diff < 0 ? n.right : n.left;
  search(near, q, best, best_d2);
  // <= keeps equal-distance candidates on the far side reachable for the tie rule.
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

std::size_t KdTree::nearest(const Point3& q, double* d2) const {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, q, best, best_d2);
  if (d2) *d2 = best_d2;
  return best;
}

// ---- closest point on triangle ------------------------------------------------

ClosestPoint closest_on_triangle(const Point3& p, const Point3& a, const Point3& b, const Point3& c) {
  ClosestPoint r;
  auto finish = [&](double u, double v, double w) {
    r.bary = {u, v, w};
    for (int k = 0; k < 3; ++k) r.point[k] = u * a[k] + v * b[k] + w * c[k];
    r.dist2 = dist2(p, r.point);
    return r;
  };
  const Point3 ab = sub(b, a), ac = sub(c, a), ap = sub(p, a);
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return finish(1, 0, 0);
  const Point3 bp = sub(p, b);
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return finish(0, 1, 0);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return finish(1 - v, v, 0);
  }
  const Point3 cp = sub(p, c);
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return finish(0, 0, 1);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return finish(1 - w, 0, w);
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return finish(0, 1 - w, w);
  }
  const double denom = va + vb + vc;
  if (denom == 0.0) {  // degenerate triangle: fall back to the closest corner
    const double da = dist2(p, a), db = dist2(p, b), dc = dist2(p, c);
    if (da <= db && da <= dc) return finish(1, 0, 0);
    return db <= dc ? finish(0, 1, 0) : finish(0, 0, 1);
  }
  const double v = vb / denom, w = vc / denom;
  return finish(1 - v - w, v, w);
}

// ---- TriangleBvh -------------------------------------------------------------

TriangleBvh::TriangleBvh(const Tensor& vertices, const std::vector<Face>& faces) {
  if (vertices.rank() != 2 || vertices.dim(1) != 3) throw DimensionError("TriangleBvh: vertices must be [V,3]");
  if (faces.empty()) throw DimensionError("TriangleBvh: mesh has no faces");
  tris_.reserve(faces.size());
  for (const Face& f : faces) {
    for (auto i : f)
      if (i >= vertices.dim(0)) throw DimensionError("TriangleBvh: face index out of range");
    tris_.push_back({point_row(vertices, f[0]), point_row(vertices, f[1]), point_row(vertices, f[2])});
  }
  order_.resize(tris_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  build(0, std::uint32_t(tris_.size()));
}

int TriangleBvh::build(std::uint32_t begin, std::uint32_t end) {
  const int id = int(nodes_.size());
  Node node{{1e300, 1e300, 1e300}, {-1e300, -1e300, -1e300}, begin, end};
  for (std::uint32_t i = begin; i < end; ++i)
    for (const Point3& v : tris_[order_[i]])
      for (int k = 0; k < 3; ++k) {
        node.lo[k] = std::min(node.lo[k], v[k]);
        node.hi[k] = std::max(node.hi[k], v[k]);
      }
  nodes_.push_back(node);
  if (end - begin <= kLeafSize) return id;
  int axis = 0;
  for (int k = 1; k < 3; ++k)
    if (node.hi[k] - node.lo[k] > node.hi[axis] - node.lo[axis]) axis = k;
  auto centroid = [&](std::uint32_t t) { return tris_[t][0][axis] + tris_[t][1][axis] + tris_[t][2][axis]; };
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return centroid(a) < centroid(b) || (centroid(a) == centroid(b) && a < b);
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[std::size_t(id)].left = left;
  nodes_[std::size_t(id)].right = right;
  return id;
}

void TriangleBvh::search(int id, const Point3& p, ClosestPoint& best) const {
  const Node& n = nodes_[std::size_t(id)];
  if (box_dist2(p, n.lo, n.hi) > best.dist2) return;
  if (n.left < 0) {
    for (std::uint32_t i = n.begin; i < n.end; ++i) {
      const auto& t = tris_[order_[i]];
      ClosestPoint c = closest_on_triangle(p, t[0], t[1], t[2]);
      c.face = order_[i];
      if (c.dist2 < best.dist2 || (c.dist2 == best.dist2 && c.face < best.face)) best = c;
    }
    return;
  }
  const Node& l = nodes_[std::size_t(n.left)];
  const Node& r = nodes_[std::size_t(n.right)];
  if (box_dist2(p, l.lo, l.hi) <= box_dist2(p, r.lo, r.hi)) {
    search(n.left, p, best);
    search(n.right, p, best);
  } else {
    search(n.right, p, best);
    search(n.left, p, best);
  }
}

ClosestPoint TriangleBvh::closest(const Point3& p) const {
  ClosestPoint best;
  best.dist2 = std::numeric_limits<double>::infinity();
  best.face = std::numeric_limits<std::size_t>::max();
  search(0, p, best);
  return best;
}

}  // namespace h4d
