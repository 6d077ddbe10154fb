#pragma once

// SMPL-compatible skinned body: shape blend, joint regression, forward
// kinematics and linear blend skinning. Pose-dependent blend shapes are not
// modelled. Every function here is built on tape ops, so the same code path
// serves plain evaluation and differentiation.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <string>

#include "h4d/archive.hpp"
#include "h4d/autodiff.hpp"

namespace h4d {

using Face = std::array<std::uint32_t, 3>;

struct BodyModel {
  Tensor template_vertices;  // [V,3] rest pose, meters
  Tensor shape_basis;        // [V,3,S]
  Tensor joint_regressor;    // [J,V], rows sum to 1
  Tensor skin_weights;       // [V,J], rows nonnegative and sum to 1
  std::vector<int> parents;  // parents[0] == -1, parents[i] < i
  std::vector<Face> faces;

  std::size_t num_vertices() const { return template_vertices.dim(0); }
  std::size_t num_joints() const { return parents.size(); }
  std::size_t shape_dims() const { return shape_basis.rank() == 3 ? shape_basis.dim(2) : 0; }
  std::size_t pose_dims() const { return 3 * num_joints(); }

  // Throws ConfigError describing the first violated invariant.
  void validate() const;
  // Joints without children (hands, feet, head top on an SMPL skeleton).
  std::vector<bool> leaf_joints() const;
};

struct Pose {
  Tensor theta;        // [J,3] axis-angle, joint 0 is the global orientation
  Tensor translation;  // [3], empty means zero
};

// Rodrigues' formula; small angles use the Taylor expansion.
Tensor rodrigues(const Tensor& axis_angle);
Tensor shape_vertices(const BodyModel& model, const Tensor& beta);
Tensor regress_joints(const Tensor& vertices, const BodyModel& model);
// Global joint transforms [J,4,4] (rotation and joint position in the posed frame).
Tensor forward_kinematics(const Pose& pose, const Tensor& rest_joints, std::span<const int> parents);
Tensor skin_lbs(const BodyModel& model, const Tensor& beta, const Pose& pose,
                const std::optional<Tensor>& canonical_offsets = std::nullopt);

// Deterministic procedural humanoid. J == 24 uses the SMPL kinematic tree.
BodyModel make_toy_model(std::size_t joints, std::size_t verts, std::size_t shape_dims, std::uint64_t seed);

// Entries template, shape_basis, joint_regressor, skin_weights, parents and
// faces, each name preceded by `prefix`. Indices are stored as floats.
void store_body_model(const BodyModel& model, TensorArchive& archive, const std::string& prefix = "");
BodyModel load_body_model(const TensorArchive& archive, const std::string& prefix = "");

// Bounding-box height of the template along y.
double body_height(const BodyModel& model);

// ---- tape ops ------------------------------------------------------------

// [n,3] axis-angles -> [n,9] row-major rotation matrices.
Var rodrigues_op(Var axis_angles);
// Rotations [L*J,9] and rest joints [J,3] -> rest-relative skinning transforms
// [L*J,12] laid out as (R row-major, t). Optional per-frame root translation [L,3].
Var fk_op(Var rotations, Var rest_joints, std::span<const int> parents, std::optional<Var> translation = {});
// Transforms [L*J,12], canonical points [V,3] (shared) or [L*V,3] -> posed [L*V,3].
Var lbs_op(Var transforms, Var canonical, const Tensor& skin_weights);
Var shape_vertices_op(const BodyModel& model, Var beta);
Var regress_joints_op(const BodyModel& model, Var vertices);  // [L*V,3] -> [L*J,3]

// Skins a whole sequence. `poses` is [L,3J]; `canonical` is [V,3] or [L*V,3].
Var pose_sequence(const BodyModel& model, Var rest_joints, Var poses, Var canonical,
                  std::optional<Var> translation = {});

}  // namespace h4d
