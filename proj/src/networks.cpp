#include "h4d/networks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "h4d/body_model.hpp"

namespace h4d {

namespace {

void add_linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                std::mt19937_64& rng, bool zero = false, bool bias = true) {
  Tensor w(Shape{in, out});
  if (!zero) init_uniform(w, static_cast<float>(std::sqrt(6.0 / double(in))), rng);
  params.set(prefix + ".w", std::move(w));
  if (bias) params.set(prefix + ".b", Tensor(Shape{out}));
}

// Residual MLP block; the shortcut is a bias-free projection when widths differ.
void add_resblock(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out,
                  std::mt19937_64& rng) {
  const std::size_t hidden = std::min(in, out);
  add_linear(params, prefix + ".fc0", in, hidden, rng);
  add_linear(params, prefix + ".fc1", hidden, out, rng);
  if (in != out) add_linear(params, prefix + ".short", in, out, rng, false, false);
}

Var resblock(Binding& p, const std::string& prefix, Var x) {
  Var net = linear(p, prefix + ".fc0", relu(x));
  Var dx = linear(p, prefix + ".fc1", relu(net));
  Var shortcut = p.parameters().contains(prefix + ".short.w") ? matmul(x, p[prefix + ".short.w"]) : x;
  return add(shortcut, dx);
}

// Max over the points of each frame, expanded back and appended to every point.
Var pool_concat(Var x, std::size_t frames) {
  const std::size_t n = x.value().dim(0) / frames;
  return concat_cols(x, repeat_segments(segment_max(x, frames), n));
}

std::vector<std::size_t> cloth_indices(const NetworkConfig& cfg) {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < cfg.cloth_joints.size(); ++j)
    if (cfg.cloth_joints[j]) idx.push_back(j);
  return idx;
}

Var recurrent(Binding& p, const NetworkConfig& cfg, const std::string& prefix, Var seq) {
  const std::vector<GateWeights> layers = bind_gru(p, prefix, cfg.gru_layers);
  return stacked_gru(seq, layers);
}

}  // namespace

std::size_t NetworkConfig::cloth_joint_count() const {
  return std::size_t(std::count(cloth_joints.begin(), cloth_joints.end(), true));
}

void NetworkConfig::validate() const {
  if (joints < 1 || vertices < 1 || shape_dim < 1 || aux_dim < 1) throw ConfigError("network dims must be positive");
  if (gru_hidden < 1 || gru_layers < 1 || feat_hidden < 1 || feat_dim < 1 || frame_latent < 1 ||
      vertex_embedding < 1 || decoder_hidden < 1) {
    throw ConfigError("network widths must be positive");
  }
  for (std::size_t w : spatial_widths)
    if (w < 1) throw ConfigError("spatial encoder widths must be positive");
  if (cloth_joints.size() != joints) throw ConfigError("clothing joint mask must have one entry per joint");
}

NetworkConfig make_network_config(const std::string& preset, std::size_t joints, std::size_t vertices,
                                  std::size_t motion_dim, const std::vector<int>& parents) {
  NetworkConfig c;
  c.preset = preset;
  c.joints = joints;
  c.vertices = vertices;
  c.motion_dim = motion_dim;
  if (preset == "full") {
    c.aux_dim = 128;
    c.spatial_widths = {64, 128, 128, 256, 512};
    c.feat_hidden = 128;
    c.feat_dim = 128;
    c.gru_hidden = 512;
    c.frame_latent = 64;
    c.decoder_hidden = 128;
  } else if (preset == "desk") {
    // defaults above
  } else if (preset == "micro") {
    c.aux_dim = 8;
    c.spatial_widths = {8, 8, 8, 8, 8};
    c.feat_hidden = 8;
    c.feat_dim = 8;
    c.gru_hidden = 8;
    c.frame_latent = 8;
    c.decoder_hidden = 8;
  } else {
    throw ConfigError("unknown network preset '" + preset + "' (expected full, desk or micro)");
  }
  if (parents.size() != joints) throw ConfigError("parents list does not match joint count");
  c.cloth_joints.assign(joints, true);
  std::vector<bool> leaf(joints, true);
  for (std::size_t i = 1; i < joints; ++i) leaf[std::size_t(parents[i])] = false;
  for (std::size_t j = 0; j < joints; ++j) c.cloth_joints[j] = !leaf[j];
  c.validate();
  return c;
}

ParameterSet init_weights(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParameterSet p;
  const auto& w = cfg.spatial_widths;
  for (const auto& [prefix, out] : {std::pair<std::string, std::size_t>{"enc.shape", cfg.shape_dim},
                                    {"enc.pose", cfg.pose_dim()}}) {
    add_linear(p, prefix + ".pos", 3, w[0], rng);
    std::size_t in = w[0];
    for (std::size_t k = 0; k < 5; ++k) {
      add_resblock(p, prefix + ".block" + std::to_string(k), in, w[k], rng);
      in = 2 * w[k];
    }
    add_linear(p, prefix + ".out", w[4], out, rng);
  }

  const std::size_t f = cfg.feat_hidden;
  add_linear(p, "enc.feat.pos", 3, 2 * f, rng);
  add_linear(p, "enc.feat.fc0", 2 * f, f, rng);
  add_linear(p, "enc.feat.fc1", 2 * f, f, rng);
  add_linear(p, "enc.feat.fc2", 2 * f, f, rng);
  add_linear(p, "enc.feat.out", f, cfg.feat_dim, rng);

  init_gru(p, "enc.gru_m", cfg.feat_dim, cfg.gru_hidden, cfg.gru_layers, rng);
  add_linear(p, "enc.gru_m.head", cfg.gru_hidden, cfg.motion_dim, rng);
  init_gru(p, "enc.gru_a", cfg.feat_dim, cfg.gru_hidden, cfg.gru_layers, rng);
  add_linear(p, "enc.gru_a.head", cfg.gru_hidden, cfg.aux_dim, rng);

  init_gru(p, "comp.motion", cfg.pose_dim() + cfg.motion_dim + cfg.aux_dim, cfg.gru_hidden, cfg.gru_layers, rng);
  add_linear(p, "comp.motion.head", cfg.gru_hidden, cfg.pose_dim(), rng, true);

  init_gru(p, "comp.shape", cfg.aux_dim + 9 * cfg.cloth_joint_count(), cfg.gru_hidden, cfg.gru_layers, rng);
  add_linear(p, "comp.shape.latent", cfg.gru_hidden, cfg.frame_latent, rng);
  Tensor embed(Shape{cfg.vertices, cfg.vertex_embedding});
  init_normal(embed, 1.0f, rng);
  p.set("comp.shape.embed", std::move(embed));
  add_linear(p, "comp.shape.dec_z", cfg.frame_latent, cfg.decoder_hidden, rng);
  add_linear(p, "comp.shape.dec_v", cfg.vertex_embedding, cfg.decoder_hidden, rng, false, false);
  add_linear(p, "comp.shape.dec_out", cfg.decoder_hidden, 3, rng, true);
  return p;
}

void store_network_config(const NetworkConfig& c, TensorArchive& ar) {
  const std::vector<std::string> presets = {"full", "desk", "micro"};
  const auto it = std::find(presets.begin(), presets.end(), c.preset);
  ar.put("config.preset", Tensor::scalar(float(it - presets.begin())));
  ar.put("config.joints", Tensor::scalar(float(c.joints)));
  ar.put("config.vertices", Tensor::scalar(float(c.vertices)));
  ar.put("config.shape_dim", Tensor::scalar(float(c.shape_dim)));
  ar.put("config.motion_dim", Tensor::scalar(float(c.motion_dim)));
  ar.put("config.aux_dim", Tensor::scalar(float(c.aux_dim)));
  Tensor widths(Shape{5});
  for (std::size_t k = 0; k < 5; ++k) widths[k] = float(c.spatial_widths[k]);
  ar.put("config.spatial_widths", widths);
  ar.put("config.feat_hidden", Tensor::scalar(float(c.feat_hidden)));
  ar.put("config.feat_dim", Tensor::scalar(float(c.feat_dim)));
  ar.put("config.gru_hidden", Tensor::scalar(float(c.gru_hidden)));
  ar.put("config.gru_layers", Tensor::scalar(float(c.gru_layers)));
  ar.put("config.frame_latent", Tensor::scalar(float(c.frame_latent)));
  ar.put("config.vertex_embedding", Tensor::scalar(float(c.vertex_embedding)));
  ar.put("config.decoder_hidden", Tensor::scalar(float(c.decoder_hidden)));
  Tensor mask(Shape{c.joints});
  for (std::size_t j = 0; j < c.joints; ++j) mask[j] = c.cloth_joints[j] ? 1.0f : 0.0f;
  ar.put("config.cloth_joints", mask);
}

NetworkConfig load_network_config(const TensorArchive& ar) {
  const std::vector<std::string> presets = {"full", "desk", "micro"};
  auto count = [&](const char* name) { return std::size_t(ar.scalar(name)); };
  NetworkConfig c;
  const std::size_t preset = count("config.preset");
  if (preset >= presets.size()) throw ConfigError("checkpoint names an unknown preset");
  c.preset = presets[preset];
  c.joints = count("config.joints");
  c.vertices = count("config.vertices");
  c.shape_dim = count("config.shape_dim");
  c.motion_dim = count("config.motion_dim");
  c.aux_dim = count("config.aux_dim");
  const Tensor& widths = ar.get("config.spatial_widths");
  if (widths.size() != 5) throw ConfigError("config.spatial_widths must have 5 entries");
  for (std::size_t k = 0; k < 5; ++k) c.spatial_widths[k] = std::size_t(widths[k]);
  c.feat_hidden = count("config.feat_hidden");
  c.feat_dim = count("config.feat_dim");
  c.gru_hidden = count("config.gru_hidden");
  c.gru_layers = count("config.gru_layers");
  c.frame_latent = count("config.frame_latent");
  c.vertex_embedding = count("config.vertex_embedding");
  c.decoder_hidden = count("config.decoder_hidden");
  const Tensor& mask = ar.get("config.cloth_joints");
  for (float m : mask.values()) c.cloth_joints.push_back(m != 0.0f);
  c.validate();
  return c;
}

Var linear(Binding& p, const std::string& prefix, Var x) {
  return add_row(matmul(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

Var spatial_encode(Binding& p, const NetworkConfig& cfg, const std::string& prefix, Var points) {
  const Tensor& P = points.value();
  if (P.rank() != 2 || P.dim(1) != 3) throw DimensionError("spatial_encode: points must be [N,3]");
  if (P.dim(0) == 0) throw DimensionError("spatial_encode: empty point cloud");
  (void)cfg;
  Var net = linear(p, prefix + ".pos", points);
  for (std::size_t k = 0; k < 5; ++k) {
    net = resblock(p, prefix + ".block" + std::to_string(k), net);
    if (k < 4) net = pool_concat(net, 1);
  }
  Var pooled = segment_max(net, 1);  // [1, w4]
  return reshape(linear(p, prefix + ".out", relu(pooled)), Shape{p.parameters().get(prefix + ".out.b").size()});
}

Var point_features(Binding& p, const NetworkConfig& cfg, Var points, std::size_t frames) {
  const Tensor& P = points.value();
  if (frames == 0) throw DimensionError("temporal_encode: empty sequence");
  if (P.rank() != 2 || P.dim(1) != 3 || P.dim(0) == 0 || P.dim(0) % frames != 0) {
    throw DimensionError("temporal_encode: points " + shape_string(P.shape()) + " do not split into " +
                         std::to_string(frames) + " equal frames");
  }
  (void)cfg;
  Var net = linear(p, "enc.feat.pos", points);
  net = linear(p, "enc.feat.fc0", relu(net));
  net = pool_concat(net, frames);
  net = linear(p, "enc.feat.fc1", relu(net));
  net = pool_concat(net, frames);
  net = linear(p, "enc.feat.fc2", relu(net));
  return linear(p, "enc.feat.out", relu(segment_max(net, frames)));
}

TemporalCodes temporal_encode(Binding& p, const NetworkConfig& cfg, Var points, std::size_t frames) {
  Var feats = point_features(p, cfg, points, frames);
  auto readout = [&](const std::string& prefix) {
    Var out = recurrent(p, cfg, prefix, feats);
    Var last = reshape(row(out, frames - 1), Shape{1, cfg.gru_hidden});
    return reshape(linear(p, prefix + ".head", last), Shape{p.parameters().get(prefix + ".head.b").size()});
  };
  return {readout("enc.gru_m"), readout("enc.gru_a")};
}

Var motion_comp(Binding& p, const NetworkConfig& cfg, Var poses, Var motion_code, Var aux_code) {
  const Tensor& P = poses.value();
  if (P.rank() != 2 || P.dim(1) != cfg.pose_dim()) {
    throw DimensionError("motion_comp: poses must be [L," + std::to_string(cfg.pose_dim()) + "]");
  }
  if (motion_code.value().size() != cfg.motion_dim || aux_code.value().size() != cfg.aux_dim) {
    throw DimensionError("motion_comp: code sizes do not match the configuration");
  }
  const std::size_t L = P.dim(0);
  Var codes = reshape(concat({motion_code, aux_code}), Shape{1, cfg.motion_dim + cfg.aux_dim});
  Var input = concat_cols(poses, repeat_segments(codes, L));
  Var residual = linear(p, "comp.motion.head", recurrent(p, cfg, "comp.motion", input));
  return add(poses, residual);
}

Var shape_comp(Binding& p, const NetworkConfig& cfg, Var aux_code, Var poses) {
  const Tensor& P = poses.value();
  if (P.rank() != 2 || P.dim(1) != cfg.pose_dim()) {
    throw DimensionError("shape_comp: poses must be [L," + std::to_string(cfg.pose_dim()) + "]");
  }
  if (aux_code.value().size() != cfg.aux_dim) throw DimensionError("shape_comp: auxiliary code size mismatch");
  const std::size_t L = P.dim(0), J = cfg.joints;
  const std::vector<std::size_t> idx = cloth_indices(cfg);
  Var rot = rodrigues_op(reshape(poses, Shape{L * J, 3}));  // [L*J,9]
  std::vector<std::size_t> rows;
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t j : idx) rows.push_back(t * J + j);
  Var cond = reshape(gather_rows(rot, rows), Shape{L, 9 * idx.size()});
  Var input = concat_cols(repeat_segments(reshape(aux_code, Shape{1, cfg.aux_dim}), L), cond);
  Var z = linear(p, "comp.shape.latent", recurrent(p, cfg, "comp.shape", input));  // [L,frame_latent]
  Var hz = linear(p, "comp.shape.dec_z", z);                                        // [L,hidden]
  Var hv = matmul(p["comp.shape.embed"], p["comp.shape.dec_v.w"]);                   // [V,hidden]
  Var hidden = relu(outer_add_rows(hz, hv));                                         // [L*V,hidden]
  return linear(p, "comp.shape.dec_out", hidden);
}

}  // namespace h4d
