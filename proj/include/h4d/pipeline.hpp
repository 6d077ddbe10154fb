#pragma once

// Model assembly, two-stage training, encoding/decoding, auto-decoding fits
// and the applications built on them.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "h4d/adam.hpp"
#include "h4d/body_model.hpp"
#include "h4d/dataio.hpp"
#include "h4d/motion_model.hpp"
#include "h4d/networks.hpp"
#include "h4d/objectives.hpp"

namespace h4d {

struct Model {
  BodyModel body;
  MotionBasis basis;
  LmmDecoder decoder;
  NetworkConfig config;
  ParameterSet weights;
  int stage = 0;  // last completed training stage

  std::size_t frames() const { return basis.L; }
};

Model make_model(BodyModel body, MotionBasis basis, const std::string& preset, std::uint64_t seed);

// Checkpoints hold the weights, `config.*`, `lmm.*` and the body model under `body.`.
TensorArchive store_checkpoint(const Model& model);
Model load_checkpoint(const TensorArchive& archive);

struct LatentTuple {
  Tensor c_s;  // [S]
  Tensor c_p;  // [3J]
  Tensor c_m;  // [K]
  Tensor c_a;  // [aux]
};
void store_latents(const LatentTuple& codes, TensorArchive& archive, const std::string& prefix = "latent.");
LatentTuple load_latents(const TensorArchive& archive, const std::string& prefix = "latent.");

struct LatentVars {
  Var c_s, c_p, c_m;
  Var c_a_motion;  // auxiliary code seen by Motion-Comp
  Var c_a_shape;   // auxiliary code seen by Shape-Comp
  std::optional<Var> translation;  // [3], shared by every frame
};

// Every intermediate of one decode, frame-major where stacked.
struct DecodeVars {
  Var shaped;       // [V,3]
  Var rest_joints;  // [J,3]
  Var poses_lmm;    // [L,3J]
  Var poses;        // [L,3J] after Motion-Comp
  Var body_linear;  // [L*V,3]
  Var body;         // [L*V,3]
  Var offsets;      // [L*V,3] canonical
  Var clothed;      // [L*V,3]
};

// With `compensate` false the networks are skipped and poses = poses_lmm,
// body = body_linear, offsets = 0, clothed = body.
DecodeVars decode(Binding& p, const Model& model, const LatentVars& codes, bool compensate = true);

// points [L*N,3]: frame-major clouds, N per frame.
LatentVars encode(Binding& p, const Model& model, Var points, std::size_t frames);

struct Reconstruction {
  LatentTuple codes;
  Tensor poses;    // [L,3J]
  Tensor body;     // [L*V,3]
  Tensor clothed;  // [L*V,3]
  Tensor joints;   // [L*J,3] regressed from the body meshes
};

Reconstruction reconstruct(const Model& model, const Tensor& points, std::size_t frames);
// Shape and clothing from `identity`, motion from `motion`.
Reconstruction retarget(const Model& model, const Tensor& identity_points, const Tensor& motion_points,
                        std::size_t frames);
Reconstruction decode_latents(const Model& model, const LatentTuple& codes,
                              const std::optional<Tensor>& translation = std::nullopt);

// Regressed joints of frame-major meshes, [L*J,3].
Tensor sequence_joints(const BodyModel& body, const Tensor& meshes, std::size_t frames);

// ---- training ------------------------------------------------------------

struct TrainConfig {
  int stage = 1;
  float lr = 1e-4f;
  std::size_t lr_drop_at = 0;  // 0 keeps the rate constant
  float lr_drop_factor = 0.1f;
  std::size_t batch = 4;
  std::size_t iterations = 2000;
  std::size_t points_per_frame = 256;
  // Fresh clouds every iteration; otherwise one fixed cloud per sequence.
  bool resample_points = true;
  std::uint64_t seed = 0;
  std::size_t log_every = 0;  // 0 disables the callback
  // Batch items run on this many threads; gradients are summed in batch order.
  std::size_t threads = 1;

  void validate() const;
};

// Iteration-count presets: micro 2k, desk 50k, full 200k with the lr drop at 200k.
TrainConfig train_preset(const std::string& preset, int stage);

struct TrainLog {
  std::size_t iteration;
  double loss;
  float lr;
};

struct TrainResult {
  std::vector<double> losses;  // one per iteration
  std::vector<float> rates;    // learning rate used at each iteration
};

using TrainCallback = std::function<void(const TrainLog&)>;

// Names trained in each stage.
bool trained_in_stage(int stage, const std::string& name);

// Supervision of one sequence: stage 1 uses the body posed with the LMM
// projection of its motion; stage 2 the true body and tiled canonical offsets.
StageTargets stage_targets(const Model& model, const SyntheticSequence& seq, int stage);
// Per-sequence training loss for input clouds `points` [L*N,3].
Var training_loss(Binding& p, const Model& model, const Tensor& points, const StageTargets& target, int stage);

// Input cloud for one training item. `stream` is the item's position in the
// run (iteration * batch + slot), or the sequence index when resample_points is off.
Tensor training_points(const Model& model, const SyntheticSequence& seq, const TrainConfig& cfg, std::uint64_t stream);

// Mutates model.weights; stage 2 needs model.stage >= 1. Throws NumericError on a non-finite loss.
TrainResult train(Model& model, const std::vector<SyntheticSequence>& data, const TrainConfig& config,
                  const TrainCallback& log = {});

// ---- fitting -------------------------------------------------------------

enum class FitLoss { chamfer, point_to_surface, vertex_l1, keypoint };
FitLoss parse_fit_loss(const std::string& name);
std::string fit_loss_name(FitLoss loss);

struct FitConfig {
  float lr = 3e-2f;
  std::size_t iterations = 500;
  std::size_t n_sample = 8192;  // predicted-surface samples per frame for Chamfer
  FitLoss loss = FitLoss::chamfer;
  PriorWeights priors;
  float init_std = 0.01f;
  // Reject any step that raises the loss and halve the rate; keeps the
  // surface samples fixed so losses stay comparable.
  bool safeguard = true;
  bool fit_translation = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Per-frame observations. Point losses read `points[t]` ([N_t,3]); vertex-l1
// reads full meshes [V,3]; keypoint reads joints [J,3]. Masked-out frames are ignored.
struct Observations {
  std::vector<Tensor> frames;
  std::vector<bool> mask;
};

struct FitResult {
  LatentTuple codes;
  std::optional<Tensor> translation;
  std::vector<double> losses;  // loss of every accepted iterate, starting with the init
  double best_loss = 0;
};

LatentTuple random_latents(const Model& model, float stddev, std::uint64_t seed);

// Data loss on observed frames plus priors, on a fresh tape.
Var fit_objective(Tape& tape, const Model& model, const LatentVars& codes, const Observations& obs,
                  const FitConfig& config, const std::vector<SurfaceSamples>& samples, DecodeVars* out = nullptr);

FitResult autodecode_fit(const Model& model, const Observations& obs, const FitConfig& config);

struct Completion {
  FitResult fit;
  Reconstruction output;
};

Observations split_frames(const Tensor& stacked, std::size_t frames, std::vector<bool> mask);

Completion complete_temporal(const Model& model, const Tensor& points, std::size_t frames,
                             const std::vector<bool>& observed, FitConfig config);
// Partial clouds per frame; empty frames are masked out.
Completion complete_spatial(const Model& model, const std::vector<Tensor>& partial, FitConfig config);
Completion predict_future(const Model& model, const Tensor& points, std::size_t frames, std::size_t observed,
                          FitConfig config);

// Keeps points on the camera side of the frame centroid. The camera orbits
// the subject once over the sequence, starting on +z.
std::vector<Tensor> orbit_partial_views(const Tensor& points, std::size_t frames, double orbit_turns = 1.0);

}  // namespace h4d
