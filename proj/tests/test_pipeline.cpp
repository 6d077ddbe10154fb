#include <gtest/gtest.h>

#include <random>

#include "h4d/pipeline.hpp"

using namespace h4d;

namespace {

struct Fixture {
  BodyModel body = make_toy_model(24, 120, 10, 2);
  std::vector<SyntheticSequence> train = gen_synthetic_dataset(body, 8, 3);
  MotionBasis basis;
  Fixture() {
    std::vector<Tensor> poses;
    for (const auto& s : train) poses.push_back(s.poses);
    basis = fit_motion_basis(poses, 0.9);
  }
  Model model(std::uint64_t seed = 1) const { return make_model(body, basis, "micro", seed); }
  Tensor points(std::size_t i, std::size_t n = 16, std::uint64_t seed = 5) const {
    return sample_sequence_points(train[i].clothed, body.faces, 30, n, seed);
  }
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

TrainConfig quick(int stage, std::size_t iterations) {
  TrainConfig c = train_preset("micro", stage);
  c.iterations = iterations;
  c.seed = 11;
  return c;
}

Observations full_meshes(const SyntheticSequence& s, std::size_t frames) {
  return split_frames(s.clothed, frames, std::vector<bool>(frames, true));
}

}  // namespace

TEST(Checkpoint, RoundTrip) {
  Model m = fx().model();
  m.stage = 1;
  const TensorArchive ar = store_checkpoint(m);
  const Model back = load_checkpoint(decode_archive(encode_archive(ar)));
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(back.stage, 1);
  EXPECT_EQ(back.body.template_vertices, m.body.template_vertices);
  EXPECT_EQ(back.decoder.B, m.decoder.B);
  EXPECT_EQ(reconstruct(back, fx().points(0), 30).clothed, reconstruct(m, fx().points(0), 30).clothed);
  TensorArchive broken = ar;
  broken.put("enc.feat.fc0.w", Tensor(Shape{2, 2}));
  EXPECT_THROW(load_checkpoint(broken), DimensionError);
}

TEST(IdentityAtInit, CompensationIsExactNoOp) {
  const Model m = fx().model();
  Tape tape;
  Binding p(tape, m.weights);
  const LatentVars c = encode(p, m, tape.constant(fx().points(1)), 30);
  const DecodeVars with = decode(p, m, c, true), without = decode(p, m, c, false);
  EXPECT_EQ(with.poses.value(), without.poses.value());
  EXPECT_EQ(with.body.value(), without.body.value());
  EXPECT_EQ(with.clothed.value(), without.clothed.value());
  for (float v : with.offsets.value().values()) EXPECT_EQ(v, 0.0f);
}

TEST(Retarget, SelfRetargetEqualsReconstruct) {
  Model m = fx().model();
  // Nonzero heads so both auxiliary paths matter.
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0.0f, 0.05f);
  for (auto& [name, t] : m.weights)
    if (name.rfind("comp.", 0) == 0)
      for (float& v : t.values()) v += n(rng);
  const Tensor pts = fx().points(2);
  const Reconstruction a = reconstruct(m, pts, 30), b = retarget(m, pts, pts, 30);
  EXPECT_EQ(a.clothed, b.clothed);
  EXPECT_EQ(a.poses, b.poses);
  // Identity comes from the first argument, motion from the second.
  const Tensor other = fx().points(3);
  const Reconstruction mix = retarget(m, pts, other, 30), rev = retarget(m, other, pts, 30);
  EXPECT_EQ(mix.codes.c_s, a.codes.c_s);
  EXPECT_EQ(mix.poses, retarget(m, other, other, 30).poses);
  EXPECT_FALSE(mix.clothed == retarget(m, other, other, 30).clothed);
  EXPECT_EQ(rev.codes.c_s, reconstruct(m, other, 30).codes.c_s);
}

TEST(Reconstruct, PointOrderWithinFramesIsIrrelevant) {
  const Model m = fx().model();
  const Tensor pts = fx().points(4);
  Tensor shuffled = pts;
  for (std::size_t t = 0; t < 30; ++t)
    for (std::size_t i = 0; i < 16; ++i)
      for (int k = 0; k < 3; ++k) shuffled.at(t * 16 + i, k) = pts.at(t * 16 + (i * 5 + 1) % 16, k);
  EXPECT_EQ(reconstruct(m, shuffled, 30).clothed, reconstruct(m, pts, 30).clothed);
  EXPECT_THROW(reconstruct(m, fx().points(0), 29), DimensionError);
}

TEST(Training, ZeroRateLeavesWeightsAndSeedFixesTrajectory) {
  Model m = fx().model();
  TrainConfig c = quick(1, 5);
  c.lr = 0.0f;
  const ParameterSet before = m.weights;
  train(m, fx().train, c);
  EXPECT_EQ(m.weights, before);

  Model a = fx().model(), b = fx().model();
  const TrainResult ra = train(a, fx().train, quick(1, 20)), rb = train(b, fx().train, quick(1, 20));
  EXPECT_EQ(ra.losses, rb.losses);
  EXPECT_EQ(a.weights, b.weights);
}

TEST(Training, ThreadCountDoesNotChangeTheResult) {
  Model a = fx().model(), b = fx().model();
  TrainConfig c = quick(1, 4);
  c.batch = 4;
  const TrainResult ra = train(a, fx().train, c);
  c.threads = 3;
  const TrainResult rb = train(b, fx().train, c);
  EXPECT_EQ(ra.losses, rb.losses);
  EXPECT_EQ(a.weights, b.weights);
}

TEST(Training, StageOneLossHalvesWithinFiveHundredIterations) {
  Model m = fx().model();
  const TrainResult r = train(m, fx().train, quick(1, 500));
  // One epoch is 8 sequences / batch 2 = 4 iterations; compare epoch means.
  auto epoch_mean = [&](std::size_t first) {
    double sum = 0;
    for (std::size_t i = first; i < first + 4; ++i) sum += r.losses[i];
    return sum / 4;
  };
  const double baseline = epoch_mean(10), final = epoch_mean(496);
  EXPECT_LE(final, 0.5 * baseline) << baseline << " -> " << final;
  for (double l : r.losses) EXPECT_TRUE(std::isfinite(l));
}

TEST(Training, StageOneOnlyTouchesEncoders) {
  Model m = fx().model();
  const ParameterSet before = m.weights;
  train(m, fx().train, quick(1, 3));
  for (const auto& [name, t] : m.weights) {
    if (trained_in_stage(1, name))
      continue;
    EXPECT_EQ(t, before.get(name)) << name;
  }
  EXPECT_FALSE(m.weights.get("enc.feat.fc0.w") == before.get("enc.feat.fc0.w"));
  EXPECT_EQ(m.stage, 1);
}

TEST(Training, StageTwoNeedsStageOneAndDropsRateOnSchedule) {
  Model m = fx().model();
  EXPECT_THROW(train(m, fx().train, quick(2, 1)), ConfigError);
  TrainConfig c = quick(1, 6);
  c.lr_drop_at = 4;
  const TrainResult r = train(m, fx().train, c);
  EXPECT_EQ(r.rates[3], c.lr);
  EXPECT_EQ(r.rates[4], c.lr * c.lr_drop_factor);
}

TEST(Training, StageTwoStartsFromStageOneTerms) {
  const Model m = fx().model();
  const SyntheticSequence& seq = fx().train[0];
  const Tensor pts = fx().points(0);
  Tape tape;
  Binding p(tape, m.weights);
  const float stage2 = training_loss(p, m, pts, stage_targets(m, seq, 2), 2).value().item();
  // Stage-1 outputs scored with the stage-2 weights.
  const LatentVars c = encode(p, m, tape.constant(pts), 30);
  const DecodeVars d = decode(p, m, c, false);
  const double expected = shape_l2(c.c_s.value(), seq.beta) + vertex_l1(d.body_linear.value(), seq.body) +
                          30.0 * vertex_l1(Tensor(seq.offsets.shape()), seq.offsets);
  EXPECT_NEAR(stage2, expected, 1e-5 * expected);
  // Stage 1 is scored against the LMM projection, which differs from the true body.
  EXPECT_FALSE(stage_targets(m, seq, 1).body == seq.body);
}

TEST(Fitting, ZeroIterationsReturnsSeededInit) {
  const Model m = fx().model();
  FitConfig c;
  c.iterations = 0;
  c.loss = FitLoss::vertex_l1;
  c.seed = 4;
  const FitResult r = autodecode_fit(m, full_meshes(fx().train[0], 30), c);
  const LatentTuple init = random_latents(m, 0.01f, 4);
  EXPECT_EQ(r.codes.c_s, init.c_s);
  EXPECT_EQ(r.codes.c_m, init.c_m);
  EXPECT_EQ(r.losses.size(), 1u);
  double ss = 0;
  for (float v : init.c_p.values()) ss += double(v) * v;
  EXPECT_NEAR(std::sqrt(ss / double(init.c_p.size())), 0.01, 0.003);
}

TEST(Fitting, MaskedFramesCarryNoDataLoss) {
  const Model m = fx().model();
  std::vector<bool> mask(30, false);
  for (std::size_t t = 0; t < 30; t += 3) mask[t] = true;
  Observations obs = split_frames(fx().train[0].clothed, 30, mask);
  FitConfig c;
  c.loss = FitLoss::vertex_l1;
  const LatentTuple init = random_latents(m, 0.01f, 1);
  auto eval = [&](const Observations& o) {
    Tape tape;
    Var ca = tape.constant(init.c_a);
    LatentVars v{tape.constant(init.c_s), tape.constant(init.c_p), tape.constant(init.c_m), ca, ca, std::nullopt};
    return fit_objective(tape, m, v, o, c, {}).value().item();
  };
  const float base = eval(obs);
  Observations moved = obs;
  for (float& v : moved.frames[1].values()) v += 1.0f;
  EXPECT_EQ(eval(moved), base);
  moved.frames[3].values()[0] += 1.0f;
  EXPECT_NE(eval(moved), base);
  EXPECT_THROW(autodecode_fit(m, split_frames(fx().train[0].clothed, 30, std::vector<bool>(30, false)), c),
               ConfigError);
}

TEST(Fitting, SafeguardedLossNeverIncreases) {
  const Model m = fx().model();
  FitConfig c;
  c.iterations = 40;
  c.n_sample = 128;
  const FitResult r = autodecode_fit(m, split_frames(fx().points(5, 64), 30, std::vector<bool>(30, true)), c);
  for (std::size_t i = 1; i < r.losses.size(); ++i) EXPECT_LE(r.losses[i], r.losses[i - 1]);
  EXPECT_LT(r.best_loss, r.losses.front());
}

TEST(Fitting, RecoversKnownCodesWithVertexLoss) {
  const Model m = fx().model();
  std::mt19937_64 rng(8);
  std::normal_distribution<float> n(0.0f, 0.3f);
  LatentTuple truth = random_latents(m, 0.0f, 0);
  for (float& v : truth.c_s.values()) v = n(rng);
  for (float& v : truth.c_m.values()) v = n(rng) * 0.5f;
  for (float& v : truth.c_p.values()) v = n(rng) * 0.3f;
  const Reconstruction target = decode_latents(m, truth);
  FitConfig c;
  c.loss = FitLoss::vertex_l1;
  c.iterations = 300;
  const FitResult r = autodecode_fit(m, split_frames(target.clothed, 30, std::vector<bool>(30, true)), c);
  const Reconstruction fit = decode_latents(m, r.codes);
  EXPECT_LT(pve(fit.clothed, target.clothed), 0.05 * body_height(m.body));
}

TEST(Completion, DegenerateCases) {
  const Model m = fx().model();
  FitConfig c;
  c.iterations = 5;
  c.n_sample = 64;
  const Tensor pts = fx().points(6, 32);
  std::vector<Tensor> whole;
  for (std::size_t t = 0; t < 30; ++t) whole.push_back(frame_rows(pts, 30, t));
  FitConfig p2s = c;
  p2s.loss = FitLoss::point_to_surface;
  const Completion spatial = complete_spatial(m, whole, c);
  const Completion temporal = complete_temporal(m, pts, 30, std::vector<bool>(30, true), p2s);
  EXPECT_EQ(spatial.output.clothed, temporal.output.clothed);

  whole[4] = Tensor(Shape{0, 3});
  EXPECT_NO_THROW(complete_spatial(m, whole, c));

  const Completion all = predict_future(m, pts, 30, 30, c);
  EXPECT_EQ(all.output.clothed, complete_temporal(m, pts, 30, std::vector<bool>(30, true), c).output.clothed);
  EXPECT_THROW(predict_future(m, pts, 30, 0, c), ConfigError);
}

TEST(Completion, OrbitViewsKeepRoughlyHalf) {
  const Tensor pts = fx().points(0, 400);
  const auto views = orbit_partial_views(pts, 30);
  ASSERT_EQ(views.size(), 30u);
  for (const Tensor& v : views) {
    EXPECT_GT(v.dim(0), 100u);
    EXPECT_LT(v.dim(0), 300u);
  }
}
