#pragma once

// Training and fitting losses plus evaluation metrics. Loss functions come in
// two flavours: plain evaluation on tensors, and tape ops for optimisation.

#include <cstdint>
#include <optional>
#include <vector>

#include "h4d/body_model.hpp"
#include "h4d/geometry.hpp"

namespace h4d {

// ---- training losses -------------------------------------------------------

struct LossWeights {
  double shape = 1.0;          // shape-code term
  double linear_body = 1.0;    // LMM-decoded body vs ground-truth body
  double motion_body = 0.0;    // motion-compensated body vs ground-truth body
  double offsets = 0.0;        // predicted vs ground-truth canonical offsets

  static LossWeights stage_preset(int stage);
};

// Mean over rows of the per-row L1 norm. Rows are vertices; the leading
// extent may fold frames in.
double vertex_l1(const Tensor& X, const Tensor& Y);
Var vertex_l1_op(Var X, Var Y);

double shape_l2(const Tensor& c, const Tensor& c_star);
Var shape_l2_op(Var c, Var c_star);

struct StageOutputs {
  std::optional<Var> shape_code;  // [S]
  std::optional<Var> body_linear;  // [L*V,3]
  std::optional<Var> body_motion;  // [L*V,3]
  std::optional<Var> offsets;      // [L*V,3]
};

struct StageTargets {
  Tensor beta;      // [S]
  Tensor body;      // [L*V,3]
  Tensor offsets;   // [L*V,3]
};

// Terms with zero weight are skipped entirely (no graph, no gradient).
Var total_loss(int stage, const StageOutputs& out, const StageTargets& target, const LossWeights& w);

// ---- surface sampling --------------------------------------------------------

struct SurfaceSamples {
  std::vector<std::uint32_t> face;  // per sample
  Tensor bary;                      // [n,3]
  Tensor points;                    // [n,3] on the mesh they were drawn from
};

// Area-weighted face choice, uniform barycentric coordinates.
SurfaceSamples sample_surface(const Tensor& vertices, const std::vector<Face>& faces, std::size_t n,
                              std::uint64_t seed);
// Re-evaluates fixed (face, bary) samples on vertices [V,3] or [L*V,3]
// (then the samples repeat on every frame). Differentiable.
Var interpolate_surface(Var vertices, const std::vector<Face>& faces, const SurfaceSamples& samples,
                        std::size_t frames = 1);

// ---- geometric distances -------------------------------------------------------

// ½·mean_a min_b |a−b| + ½·mean_b min_a |a−b| with Euclidean distances.
double chamfer(const Tensor& a, const Tensor& b);
// Differentiable in `a` only.
Var chamfer_op(Var a, const Tensor& b);

// Mean distance from each point to the closest mesh triangle.
double point_to_surface(const Tensor& points, const Tensor& vertices, const std::vector<Face>& faces);
// Differentiable in the mesh vertices.
Var point_to_surface_op(const Tensor& points, Var vertices, const std::vector<Face>& faces);

// ---- pose metrics ---------------------------------------------------------------

struct JointMetrics {
  double mpjpe = 0.0;
  double pa_mpjpe = 0.0;
  std::optional<double> accel;  // absent when L < 3
};

// pred and gt are [L,J,3] (or [L*J,3] with frames given). Units follow the inputs.
JointMetrics mpjpe_family(const Tensor& pred, const Tensor& gt, std::size_t frames);
double pve(const Tensor& pred, const Tensor& gt);

// ---- volumetric IoU -------------------------------------------------------------

struct IouResult {
  double iou = 0.0;
  bool watertight = true;  // false when either mesh has open or non-manifold edges
};

bool is_watertight(const std::vector<Face>& faces);
struct VoxelGrid {
  Point3 lo{};    // corner of voxel (0,0,0)
  Point3 step{};  // voxel edge per axis
  std::size_t resolution = 64;
};

// The union bounding box of both meshes, padded by 5% per side.
VoxelGrid union_grid(const Tensor& verts_a, const Tensor& verts_b, std::size_t resolution);
// Occupancy (x fastest) by nonzero winding number along +x rays through voxel
// centres, so self-intersecting posed bodies still count as solid.
std::vector<std::uint8_t> voxelize(const Tensor& vertices, const std::vector<Face>& faces, const VoxelGrid& grid);
IouResult volumetric_iou(const Tensor& verts_a, const std::vector<Face>& faces_a, const Tensor& verts_b,
                         const std::vector<Face>& faces_b, std::size_t resolution = 64);

// ---- priors ------------------------------------------------------------------------

struct PriorWeights {
  double shape = 1e-2;
  double motion = 1e-3;
  double auxiliary = 1e-3;
};

// w_s·|c_s|² + w_m·Σ α_i²/λ_i (λ_i > 0 only) + w_a·|c_a|².
Var prior_terms(Var c_s, Var c_m, Var c_a, const std::vector<double>& eigenvalues, const PriorWeights& w);
double motion_energy(const Tensor& c_m, const std::vector<double>& eigenvalues);

}  // namespace h4d
