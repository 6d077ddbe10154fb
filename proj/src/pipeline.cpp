#include "h4d/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

namespace h4d {

namespace {

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

Binding frozen(Tape& tape, const Model& model) {
  return Binding(tape, model.weights, [](const std::string&) { return false; });
}

Var tile_rows(Var x, std::size_t times) {
  const Shape s = x.shape();
  return reshape(repeat_segments(reshape(x, Shape{1, s[0] * s[1]}), times), Shape{times * s[0], s[1]});
}

Var frame_slice(Var stacked, std::size_t frames, std::size_t t) {
  const std::size_t n = stacked.shape()[0] / frames;
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), t * n);
  return gather_rows(stacked, rows);
}

Reconstruction collect(const Model& model, const LatentVars& codes, const DecodeVars& d) {
  Reconstruction r;
  r.codes = {codes.c_s.value(), codes.c_p.value(), codes.c_m.value(), codes.c_a_shape.value()};
  r.poses = d.poses.value();
  r.body = d.body.value();
  r.clothed = d.clothed.value();
  r.joints = sequence_joints(model.body, r.body, model.frames());
  return r;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{std::uint32_t(a), std::uint32_t(a >> 32), std::uint32_t(b), std::uint32_t(b >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t(words[0]) << 32) | words[1];
}

}  // namespace

Model make_model(BodyModel body, MotionBasis basis, const std::string& preset, std::uint64_t seed) {
  body.validate();
  if (basis.J != body.num_joints()) throw ConfigError("motion basis and body model disagree on the joint count");
  Model m;
  m.config = make_network_config(preset, body.num_joints(), body.num_vertices(), basis.code_dim(), body.parents);
  m.config.shape_dim = body.shape_dims();
  m.weights = init_weights(m.config, seed);
  m.decoder = make_decoder(basis);
  m.body = std::move(body);
  m.basis = std::move(basis);
  return m;
}

TensorArchive store_checkpoint(const Model& model) {
  TensorArchive ar;
  for (const auto& [name, value] : model.weights) ar.put(name, value);
  store_network_config(model.config, ar);
  ar.put("config.stage", Tensor::scalar(float(model.stage)));
  ar.put("config.L", Tensor::scalar(float(model.frames())));
  store_basis(model.basis, ar);
  store_body_model(model.body, ar, "body.");
  return ar;
}

Model load_checkpoint(const TensorArchive& ar) {
  Model m;
  m.config = load_network_config(ar);
  m.stage = int(ar.scalar("config.stage"));
  m.basis = load_basis(ar);
  m.body = load_body_model(ar, "body.");
  m.decoder = make_decoder(m.basis);
  if (m.config.joints != m.body.num_joints() || m.config.vertices != m.body.num_vertices() ||
      m.config.motion_dim != m.basis.code_dim() || m.config.shape_dim != m.body.shape_dims()) {
    throw ConfigError("checkpoint configuration does not match its body model and motion basis");
  }
  // The weight layout is fixed by the configuration.
  const ParameterSet layout = init_weights(m.config, 0);
  for (const auto& [name, value] : layout) {
    const Tensor& stored = ar.get(name);
    if (stored.shape() != value.shape()) {
      throw DimensionError("checkpoint entry '" + name + "' has shape " + shape_string(stored.shape()) + ", expected " +
                           shape_string(value.shape()));
    }
    m.weights.set(name, stored);
  }
  return m;
}

void store_latents(const LatentTuple& c, TensorArchive& ar, const std::string& prefix) {
  ar.put(prefix + "c_s", c.c_s);
  ar.put(prefix + "c_p", c.c_p);
  ar.put(prefix + "c_m", c.c_m);
  ar.put(prefix + "c_a", c.c_a);
}

LatentTuple load_latents(const TensorArchive& ar, const std::string& prefix) {
  return {ar.get(prefix + "c_s"), ar.get(prefix + "c_p"), ar.get(prefix + "c_m"), ar.get(prefix + "c_a")};
}

DecodeVars decode(Binding& p, const Model& model, const LatentVars& c, bool compensate) {
  Tape& tape = p.tape();
  const std::size_t L = model.frames(), V = model.body.num_vertices();
  DecodeVars d;
  d.shaped = shape_vertices_op(model.body, c.c_s);
  d.rest_joints = regress_joints_op(model.body, d.shaped);
  d.poses_lmm = lmm_decode_op(model.decoder, c.c_p, c.c_m);
  std::optional<Var> trans;
  if (c.translation) trans = tile_rows(reshape(*c.translation, Shape{1, 3}), L);
  d.body_linear = pose_sequence(model.body, d.rest_joints, d.poses_lmm, d.shaped, trans);
  if (!compensate) {
    d.poses = d.poses_lmm;
    d.body = d.body_linear;
    d.offsets = tape.constant(Tensor(Shape{L * V, 3}));
    d.clothed = d.body;
    return d;
  }
  d.poses = motion_comp(p, model.config, d.poses_lmm, c.c_m, c.c_a_motion);
  d.body = pose_sequence(model.body, d.rest_joints, d.poses, d.shaped, trans);
  d.offsets = shape_comp(p, model.config, c.c_a_shape, d.poses);
  d.clothed = pose_sequence(model.body, d.rest_joints, d.poses, add(tile_rows(d.shaped, L), d.offsets), trans);
  return d;
}

LatentVars encode(Binding& p, const Model& model, Var points, std::size_t frames) {
  if (frames != model.frames()) {
    throw DimensionError("sequence has " + std::to_string(frames) + " frames, the model was built for " +
                         std::to_string(model.frames()));
  }
  const Tensor& P = points.value();
  if (P.rank() != 2 || P.dim(1) != 3 || P.dim(0) == 0 || P.dim(0) % frames != 0) {
    throw DimensionError("points " + shape_string(P.shape()) + " do not split into " + std::to_string(frames) +
                         " frames");
  }
  Var first = frame_slice(points, frames, 0);
  LatentVars c;
  c.c_s = spatial_encode(p, model.config, "enc.shape", first);
  c.c_p = spatial_encode(p, model.config, "enc.pose", first);
  const TemporalCodes t = temporal_encode(p, model.config, points, frames);
  c.c_m = t.motion;
  c.c_a_motion = c.c_a_shape = t.auxiliary;
  return c;
}

Reconstruction reconstruct(const Model& model, const Tensor& points, std::size_t frames) {
  Tape tape;
  Binding p = frozen(tape, model);
  const LatentVars c = encode(p, model, tape.constant(points), frames);
  return collect(model, c, decode(p, model, c));
}

Reconstruction retarget(const Model& model, const Tensor& identity_points, const Tensor& motion_points,
                        std::size_t frames) {
  Tape tape;
  Binding p = frozen(tape, model);
  const LatentVars id = encode(p, model, tape.constant(identity_points), frames);
  const LatentVars mo = encode(p, model, tape.constant(motion_points), frames);
  const LatentVars c{id.c_s, mo.c_p, mo.c_m, mo.c_a_motion, id.c_a_shape, std::nullopt};
  return collect(model, c, decode(p, model, c));
}

Reconstruction decode_latents(const Model& model, const LatentTuple& codes, const std::optional<Tensor>& translation) {
  Tape tape;
  Binding p = frozen(tape, model);
  Var c_a = tape.constant(codes.c_a);
  LatentVars c{tape.constant(codes.c_s), tape.constant(codes.c_p), tape.constant(codes.c_m), c_a, c_a, std::nullopt};
  if (translation) c.translation = tape.constant(*translation);
  return collect(model, c, decode(p, model, c));
}

Tensor sequence_joints(const BodyModel& body, const Tensor& meshes, std::size_t frames) {
  if (meshes.rank() != 2 || meshes.dim(0) != frames * body.num_vertices()) {
    throw DimensionError("sequence_joints: meshes do not match the body model");
  }
  Tape tape;
  return regress_joints_op(body, tape.constant(meshes)).value();
}

// ---- training ------------------------------------------------------------

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("train stage must be 1 or 2");
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and nonnegative");
  if (batch == 0 || points_per_frame == 0) throw ConfigError("batch and points_per_frame must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
  if (!(lr_drop_factor > 0.0f)) throw ConfigError("lr_drop_factor must be positive");
}

TrainConfig train_preset(const std::string& preset, int stage) {
  TrainConfig c;
  c.stage = stage;
  if (preset == "micro") {
    c.iterations = 2000;
    c.lr = 1e-3f;
    c.batch = 2;
    c.points_per_frame = 16;
  } else if (preset == "desk") {
    c.iterations = 50000;
    c.lr = 1e-3f;
    c.lr_drop_at = 40000;
    c.batch = stage == 1 ? 16 : 4;
    c.points_per_frame = 128;
  } else if (preset == "full") {
    c.iterations = stage == 1 ? 200000 : 400000;
    c.lr = 1e-4f;
    c.lr_drop_at = stage == 1 ? 0 : 200000;
    c.batch = stage == 1 ? 16 : 4;
    c.points_per_frame = 1024;
  } else {
    throw ConfigError("unknown preset '" + preset + "'");
  }
  return c;
}

bool trained_in_stage(int stage, const std::string& name) {
  if (stage == 2) return true;
  for (const char* prefix : {"enc.shape.", "enc.pose.", "enc.feat.", "enc.gru_m."})
    if (starts_with(name, prefix)) return true;
  return false;
}

StageTargets stage_targets(const Model& model, const SyntheticSequence& s, int stage) {
  const std::size_t L = model.frames(), V = model.body.num_vertices();
  if (s.frames() != L || s.poses.dim(1) != model.body.pose_dims() || s.offsets.dim(0) != V) {
    throw DimensionError("training sequence does not match the model dimensions");
  }
  StageTargets t;
  t.beta = s.beta;
  if (stage == 1) {
    const auto [c_p, code] = lmm_encode(model.basis, s.poses);
    t.body = decode_meshes(model.body, s.beta, lmm_decode(model.basis, c_p, code));
  } else {
    t.body = s.body;
    t.offsets = Tensor(Shape{L * V, 3});
    for (std::size_t f = 0; f < L; ++f) std::copy_n(s.offsets.data(), 3 * V, t.offsets.data() + 3 * f * V);
  }
  return t;
}

Var training_loss(Binding& p, const Model& model, const Tensor& points, const StageTargets& target, int stage) {
  const LatentVars c = encode(p, model, p.tape().constant(points), model.frames());
  const DecodeVars d = decode(p, model, c, stage == 2);
  StageOutputs out;
  out.shape_code = c.c_s;
  if (stage == 1) {
    out.body_linear = d.body_linear;
  } else {
    out.body_motion = d.body;
    out.offsets = d.offsets;
  }
  return total_loss(stage, out, target, LossWeights::stage_preset(stage));
}

Tensor training_points(const Model& model, const SyntheticSequence& seq, const TrainConfig& cfg, std::uint64_t stream) {
  return sample_sequence_points(seq.clothed, model.body.faces, model.frames(), cfg.points_per_frame,
                                mix(cfg.seed, stream));
}

TrainResult train(Model& model, const std::vector<SyntheticSequence>& data, const TrainConfig& cfg,
                  const TrainCallback& log) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training needs at least one sequence");
  if (cfg.stage == 2 && model.stage < 1) throw ConfigError("stage 2 needs a stage-1 checkpoint");

  std::vector<StageTargets> targets;
  for (const auto& s : data) targets.push_back(stage_targets(model, s, cfg.stage));

  Adam adam(AdamOptions{cfg.lr});
  std::mt19937_64 order_rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  TrainResult result;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const float lr = cfg.lr_drop_at > 0 && it >= cfg.lr_drop_at ? cfg.lr * cfg.lr_drop_factor : cfg.lr;
    adam.set_lr(lr);
    std::vector<std::size_t> picks(cfg.batch);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      picks[b] = order[cursor++];
    }
    std::vector<double> values(cfg.batch);
    std::vector<GradientMap> grads(cfg.batch);
    auto run_item = [&](std::size_t b) {
      const std::size_t idx = picks[b];
      const Tensor points = training_points(model, data[idx], cfg, cfg.resample_points ? it * cfg.batch + b : idx);
      Tape tape;
      Binding p(tape, model.weights, [&](const std::string& n) { return trained_in_stage(cfg.stage, n); });
      Var loss = scale(training_loss(p, model, points, targets[idx], cfg.stage), 1.0f / float(cfg.batch));
      values[b] = loss.value().item();
      if (!std::isfinite(values[b])) return;
      tape.backward(loss);
      grads[b] = p.gradients();
    };
    const std::size_t workers = std::min(cfg.threads, cfg.batch);
    if (workers <= 1) {
      for (std::size_t b = 0; b < cfg.batch; ++b) run_item(b);
    } else {
      std::vector<std::exception_ptr> errors(workers);
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          try {
            for (std::size_t b = w; b < cfg.batch; b += workers) run_item(b);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    // Accumulate in batch order so the result does not depend on the thread count.
    GradientMap total;
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (!std::isfinite(values[b])) {
        throw NumericError("training diverged at iteration " + std::to_string(it) + " (sequence " +
                           std::to_string(picks[b]) + "): loss is " + std::to_string(values[b]));
      }
      batch_loss += values[b];
      for (auto& [name, g] : grads[b]) {
        auto [slot, fresh] = total.try_emplace(name, g);
        if (!fresh)
          for (std::size_t i = 0; i < g.size(); ++i) slot->second[i] += g[i];
      }
    }
    adam.step(model.weights, total);
    result.losses.push_back(batch_loss);
    result.rates.push_back(lr);
    if (log && cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.iterations)) log({it, batch_loss, lr});
  }
  model.stage = std::max(model.stage, cfg.stage);
  return result;
}

// ---- fitting -------------------------------------------------------------

FitLoss parse_fit_loss(const std::string& name) {
  if (name == "chamfer") return FitLoss::chamfer;
  if (name == "p2s" || name == "point_to_surface") return FitLoss::point_to_surface;
  if (name == "vertex_l1") return FitLoss::vertex_l1;
  if (name == "keypoint") return FitLoss::keypoint;
  throw ConfigError("unknown fit loss '" + name + "' (expected chamfer, p2s, vertex_l1 or keypoint)");
}

std::string fit_loss_name(FitLoss loss) {
  switch (loss) {
    case FitLoss::chamfer: return "chamfer";
    case FitLoss::point_to_surface: return "p2s";
    case FitLoss::vertex_l1: return "vertex_l1";
    case FitLoss::keypoint: return "keypoint";
  }
  return "?";
}

void FitConfig::validate() const {
  if (!(lr > 0.0f) || !std::isfinite(lr)) throw ConfigError("fit lr must be positive");
  if (n_sample == 0) throw ConfigError("fit n_sample must be positive");
  if (!(init_std >= 0.0f)) throw ConfigError("fit init_std must be nonnegative");
  if (priors.shape < 0 || priors.motion < 0 || priors.auxiliary < 0) throw ConfigError("prior weights must be nonnegative");
}

LatentTuple random_latents(const Model& model, float stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LatentTuple c{Tensor(Shape{model.body.shape_dims()}), Tensor(Shape{model.body.pose_dims()}),
                Tensor(Shape{model.basis.code_dim()}), Tensor(Shape{model.config.aux_dim})};
  for (Tensor* t : {&c.c_s, &c.c_p, &c.c_m, &c.c_a})
    if (stddev > 0) init_normal(*t, stddev, rng);
  return c;
}

Var fit_objective(Tape& tape, const Model& model, const LatentVars& codes, const Observations& obs,
                  const FitConfig& cfg, const std::vector<SurfaceSamples>& samples, DecodeVars* out) {
  const std::size_t L = model.frames();
  if (obs.frames.size() != L || obs.mask.size() != L) throw DimensionError("observations must cover every frame");
  Binding p = frozen(tape, model);
  const DecodeVars d = decode(p, model, codes);
  std::optional<Var> data;
  std::size_t observed = 0;
  for (std::size_t t = 0; t < L; ++t) {
    if (!obs.mask[t]) continue;
    ++observed;
    Var term;
    switch (cfg.loss) {
      case FitLoss::chamfer: {
        Var pred = interpolate_surface(frame_slice(d.clothed, L, t), model.body.faces, samples.at(t));
        term = chamfer_op(pred, obs.frames[t]);
        break;
      }
      case FitLoss::point_to_surface:
        term = point_to_surface_op(obs.frames[t], frame_slice(d.clothed, L, t), model.body.faces);
        break;
      case FitLoss::vertex_l1:
        term = vertex_l1_op(frame_slice(d.clothed, L, t), tape.constant(obs.frames[t]));
        break;
      case FitLoss::keypoint:
        term = vertex_l1_op(regress_joints_op(model.body, frame_slice(d.body, L, t)), tape.constant(obs.frames[t]));
        break;
    }
    data = data ? add(*data, term) : term;
  }
  if (!data) throw ConfigError("fit needs at least one observed frame");
  Var prior = prior_terms(codes.c_s, codes.c_m, codes.c_a_shape, model.basis.code_eigenvalues(), cfg.priors);
  if (out) *out = d;
  return add(scale(*data, 1.0f / float(observed)), prior);
}

FitResult autodecode_fit(const Model& model, const Observations& obs, const FitConfig& cfg) {
  cfg.validate();
  const std::size_t L = model.frames();
  if (obs.frames.size() != L || obs.mask.size() != L) {
    throw DimensionError("observations cover " + std::to_string(obs.frames.size()) + " frames, the model needs " +
                         std::to_string(L));
  }
  if (std::none_of(obs.mask.begin(), obs.mask.end(), [](bool b) { return b; })) {
    throw ConfigError("frame mask selects no frames");
  }

  ParameterSet vars;
  const LatentTuple init = random_latents(model, cfg.init_std, cfg.seed);
  vars.set("c_s", init.c_s);
  vars.set("c_p", init.c_p);
  vars.set("c_m", init.c_m);
  vars.set("c_a", init.c_a);
  if (cfg.fit_translation) vars.set("translation", Tensor(Shape{3}));

  std::mt19937_64 sample_seeds(mix(cfg.seed, 0x5eed));
  auto draw_samples = [&](const ParameterSet& v) {
    std::vector<SurfaceSamples> s(L);
    if (cfg.loss != FitLoss::chamfer) return s;
    Tape tape;
    Binding b(tape, v, [](const std::string&) { return false; });
    LatentVars c{b["c_s"], b["c_p"], b["c_m"], b["c_a"], b["c_a"], std::nullopt};
    if (v.contains("translation")) c.translation = b["translation"];
    Binding p = frozen(tape, model);
    const Tensor clothed = decode(p, model, c).clothed.value();
    for (std::size_t t = 0; t < L; ++t)
      if (obs.mask[t]) s[t] = sample_surface(frame_rows(clothed, L, t), model.body.faces, cfg.n_sample, sample_seeds());
    return s;
  };
  auto evaluate = [&](const ParameterSet& v, const std::vector<SurfaceSamples>& s, GradientMap& grads) {
    Tape tape;
    Binding b(tape, v);
    LatentVars c{b["c_s"], b["c_p"], b["c_m"], b["c_a"], b["c_a"], std::nullopt};
    if (v.contains("translation")) c.translation = b["translation"];
    Var loss = fit_objective(tape, model, c, obs, cfg, s);
    tape.backward(loss);
    grads = b.gradients();
    return double(loss.value().item());
  };

  std::vector<SurfaceSamples> samples = draw_samples(vars);
  GradientMap grads;
  double loss = evaluate(vars, samples, grads);
  if (!std::isfinite(loss)) throw NumericError("fit objective is not finite at the initial codes");
  FitResult result;
  result.losses.push_back(loss);
  ParameterSet best = vars;
  double best_loss = loss;
  Adam adam(AdamOptions{cfg.lr});

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    ParameterSet candidate = vars;
    Adam trial = adam;
    trial.step(candidate, grads);
    if (!cfg.safeguard) samples = draw_samples(candidate);
    GradientMap candidate_grads;
    const double candidate_loss = evaluate(candidate, samples, candidate_grads);
    if (cfg.safeguard && !(candidate_loss <= loss)) {
      adam.set_lr(adam.lr() * 0.5f);
      continue;
    }
    if (!std::isfinite(candidate_loss)) throw NumericError("fit diverged at iteration " + std::to_string(it));
    vars = std::move(candidate);
    adam = trial;
    grads = std::move(candidate_grads);
    loss = candidate_loss;
    result.losses.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = vars;
    }
  }
  result.codes = {best.get("c_s"), best.get("c_p"), best.get("c_m"), best.get("c_a")};
  if (best.contains("translation")) result.translation = best.get("translation");
  result.best_loss = best_loss;
  return result;
}

Observations split_frames(const Tensor& stacked, std::size_t frames, std::vector<bool> mask) {
  if (mask.size() != frames) throw DimensionError("mask length must equal the frame count");
  Observations obs;
  for (std::size_t t = 0; t < frames; ++t) obs.frames.push_back(frame_rows(stacked, frames, t));
  obs.mask = std::move(mask);
  return obs;
}

Completion complete_temporal(const Model& model, const Tensor& points, std::size_t frames,
                             const std::vector<bool>& observed, FitConfig config) {
  Completion c;
  c.fit = autodecode_fit(model, split_frames(points, frames, observed), config);
  c.output = decode_latents(model, c.fit.codes, c.fit.translation);
  return c;
}

Completion complete_spatial(const Model& model, const std::vector<Tensor>& partial, FitConfig config) {
  config.loss = FitLoss::point_to_surface;
  Observations obs;
  obs.frames = partial;
  for (const Tensor& t : partial) obs.mask.push_back(t.rank() == 2 && t.dim(0) > 0);
  Completion c;
  c.fit = autodecode_fit(model, obs, config);
  c.output = decode_latents(model, c.fit.codes, c.fit.translation);
  return c;
}

Completion predict_future(const Model& model, const Tensor& points, std::size_t frames, std::size_t observed,
                          FitConfig config) {
  if (observed == 0 || observed > frames) throw ConfigError("predict_future needs 1..L observed frames");
  std::vector<bool> mask(frames, false);
  std::fill_n(mask.begin(), observed, true);
  return complete_temporal(model, points, frames, mask, config);
}

std::vector<Tensor> orbit_partial_views(const Tensor& points, std::size_t frames, double orbit_turns) {
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < frames; ++t) {
    const Tensor f = frame_rows(points, frames, t);
    const std::size_t n = f.dim(0);
    double c[3] = {0, 0, 0};
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) c[k] += f.at(i, k) / double(n);
    const double phi = 6.283185307179586 * orbit_turns * double(t) / double(frames);
    const double dir[3] = {std::sin(phi), 0.0, std::cos(phi)};
    std::vector<float> kept;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += (f.at(i, k) - c[k]) * dir[k];
      if (s > 0)
        for (int k = 0; k < 3; ++k) kept.push_back(f.at(i, k));
    }
    const std::size_t m = kept.size() / 3;
    out.emplace_back(Shape{m, 3}, std::move(kept));
  }
  return out;
}

}  // namespace h4d
