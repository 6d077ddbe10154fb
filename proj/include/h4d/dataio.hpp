#pragma once

// Synthetic corpus generation and file plumbing: sequence archives, dataset
// manifests, OBJ export and content hashing.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "h4d/archive.hpp"
#include "h4d/body_model.hpp"

namespace h4d {

// Motion-curve families. Train and test draw from disjoint family sets.
const std::vector<std::string>& train_families();
const std::vector<std::string>& test_families();

enum class Split { train, test };

struct SyntheticSequence {
  std::string family;
  Tensor beta;     // [S]
  Tensor poses;    // [L,3J]
  Tensor offsets;  // [V,3] canonical clothing displacement
  Tensor body;     // [L*V,3] posed body, no offsets
  Tensor clothed;  // [L*V,3] posed body with offsets

  std::size_t frames() const { return poses.dim(0); }
};

struct SynthesisOptions {
  std::size_t frames = 30;
  float max_angle = 1.6f;      // every pose component is clamped to this bound
  float offset_scale = 0.02f;  // peak clothing displacement, meters
  float beta_scale = 1.0f;
};

// Posed meshes of a whole sequence, frame-major [L*V,3], via skin_lbs.
Tensor decode_meshes(const BodyModel& model, const Tensor& beta, const Tensor& poses,
                     const std::optional<Tensor>& offsets = std::nullopt);

// Joint-angle curve of one family, [L,3J]; J == 24 follows the SMPL joint layout.
Tensor family_motion(const std::string& family, std::size_t joints, std::size_t frames, std::mt19937_64& rng,
                     float max_angle);

SyntheticSequence make_sequence(const BodyModel& model, const std::string& family, const SynthesisOptions& opt,
                                std::mt19937_64& rng);
std::vector<SyntheticSequence> gen_synthetic_dataset(const BodyModel& model, std::size_t n_seqs, std::uint64_t seed,
                                                     Split split = Split::train, const SynthesisOptions& opt = {});

// Sliding windows [L,3J] over a longer pose sequence.
std::vector<Tensor> slice_subsequences(const Tensor& pose_seq, std::size_t length, std::size_t stride);

// Area-uniform samples of every frame, [L*N,3].
Tensor sample_sequence_points(const Tensor& meshes, const std::vector<Face>& faces, std::size_t frames,
                              std::size_t per_frame, std::uint64_t seed);

// Frame slices of a frame-major stack.
Tensor frame_rows(const Tensor& stacked, std::size_t frames, std::size_t frame);

void store_sequence(const SyntheticSequence& seq, TensorArchive& archive);
SyntheticSequence load_sequence(const TensorArchive& archive);

// Writes model.hta, train/seq_NNNN.hta, test/seq_NNNN.hta and a `name=path` manifest.
void write_dataset(const std::filesystem::path& dir, const BodyModel& model,
                   const std::vector<SyntheticSequence>& train, const std::vector<SyntheticSequence>& test);
std::vector<std::pair<std::string, std::string>> read_manifest(const std::filesystem::path& path);

struct Dataset {
  BodyModel model;
  std::vector<SyntheticSequence> train, test;
};
Dataset read_dataset(const std::filesystem::path& dir);

// Writes frame_0000.obj ... with 1-based faces; returns the paths in order.
std::vector<std::filesystem::path> export_obj_sequence(const Tensor& meshes, std::size_t frames,
                                                       const std::vector<Face>& faces,
                                                       const std::filesystem::path& dir);

// Git blob hash: SHA-1 of "blob <size>\0" followed by the bytes, hex encoded.
std::string content_hash(std::span<const std::uint8_t> bytes);
std::string file_hash(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

}  // namespace h4d
