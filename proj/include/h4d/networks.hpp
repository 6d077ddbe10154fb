#pragma once

// Encoders and compensation networks built from tape primitives.
//
//   enc.shape / enc.pose  residual point encoders on the first frame
//   enc.feat              shallow per-frame point feature extractor (shared)
//   enc.gru_m / enc.gru_a recurrent readouts for the motion and auxiliary codes
//   comp.motion           per-frame pose residuals
//   comp.shape            per-frame canonical vertex offsets

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "h4d/archive.hpp"
#include "h4d/parameters.hpp"
#include "h4d/recurrent.hpp"

namespace h4d {

struct NetworkConfig {
  std::string preset = "desk";
  std::size_t joints = 24;
  std::size_t vertices = 600;
  std::size_t shape_dim = 10;
  std::size_t motion_dim = 0;  // K of the fitted motion basis
  std::size_t aux_dim = 32;
  std::array<std::size_t, 5> spatial_widths{32, 64, 64, 128, 128};
  std::size_t feat_hidden = 64;
  std::size_t feat_dim = 64;
  std::size_t gru_hidden = 64;
  std::size_t gru_layers = 2;
  std::size_t frame_latent = 32;
  std::size_t vertex_embedding = 16;
  std::size_t decoder_hidden = 64;
  // Joints whose rotations condition the offset network.
  std::vector<bool> cloth_joints;

  std::size_t pose_dim() const { return 3 * joints; }
  std::size_t cloth_joint_count() const;
  void validate() const;
};

// "full", "desk" or "micro". The clothing mask defaults to every non-leaf joint.
NetworkConfig make_network_config(const std::string& preset, std::size_t joints, std::size_t vertices,
                                  std::size_t motion_dim, const std::vector<int>& parents);

ParameterSet init_weights(const NetworkConfig& config, std::uint64_t seed);

void store_network_config(const NetworkConfig& config, TensorArchive& archive);
NetworkConfig load_network_config(const TensorArchive& archive);

struct TemporalCodes {
  Var motion;     // [K]
  Var auxiliary;  // [aux_dim]
};

// Linear layer `<prefix>.w` [in,out], `<prefix>.b` [out] applied row-wise.
Var linear(Binding& p, const std::string& prefix, Var x);

// points [N,3] -> [out_dim]; prefix is "enc.shape" or "enc.pose".
Var spatial_encode(Binding& p, const NetworkConfig& cfg, const std::string& prefix, Var points);
// Per-frame features [L,feat_dim] from points [L*N,3] (N points per frame).
Var point_features(Binding& p, const NetworkConfig& cfg, Var points, std::size_t frames);
TemporalCodes temporal_encode(Binding& p, const NetworkConfig& cfg, Var points, std::size_t frames);
// poses [L,3J] -> refined poses [L,3J].
Var motion_comp(Binding& p, const NetworkConfig& cfg, Var poses, Var motion_code, Var aux_code);
// Canonical offsets [L*V,3] conditioned on c_a and the refined poses.
Var shape_comp(Binding& p, const NetworkConfig& cfg, Var aux_code, Var poses);

}  // namespace h4d
