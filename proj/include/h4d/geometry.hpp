#pragma once

// Spatial queries used by the fitting losses and metrics.

#include <array>
#include <cstdint>
#include <vector>

#include "h4d/body_model.hpp"

namespace h4d {

using Point3 = std::array<double, 3>;

// Nearest-neighbour search over a fixed point set (rows of a [N,3] tensor).
class KdTree {
 public:
  explicit KdTree(const Tensor& points);
  // Index of the nearest point; ties resolve to the lowest index.
  std::size_t nearest(const Point3& q, double* dist2 = nullptr) const;
  std::size_t size() const { return pts_.size(); }

 private:
  struct Node {
    std::uint32_t begin, end;  // range in order_
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
  };
  int build(std::uint32_t begin, std::uint32_t end);
  void search(int node, const Point3& q, std::size_t& best, double& best_d2) const;

  std::vector<Point3> pts_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

struct ClosestPoint {
  std::size_t face = 0;
  std::array<double, 3> bary{};  // weights of the face's three corners
  Point3 point{};
  double dist2 = 0.0;
};

// Exact closest point on a triangle (Voronoi-region walk).
ClosestPoint closest_on_triangle(const Point3& p, const Point3& a, const Point3& b, const Point3& c);

// Bounding-volume hierarchy over mesh triangles.
class TriangleBvh {
 public:
  TriangleBvh(const Tensor& vertices, const std::vector<Face>& faces);
  ClosestPoint closest(const Point3& p) const;

 private:
  struct Node {
    Point3 lo, hi;
    std::uint32_t begin, end;
    std::int32_t left = -1, right = -1;
  };
  int build(std::uint32_t begin, std::uint32_t end);
  void search(int node, const Point3& p, ClosestPoint& best) const;

  std::vector<std::array<Point3, 3>> tris_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

Point3 point_row(const Tensor& t, std::size_t r);

}  // namespace h4d
