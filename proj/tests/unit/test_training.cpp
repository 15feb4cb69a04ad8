#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "bkf/gradcheck.hpp"
#include "bkf/pack.hpp"
#include "bkf/training.hpp"
#include "test_util.hpp"

namespace bkf::train {
namespace {

using nets::ModelKind;
using nets::ModelSpec;

world::DiskWorldConfig tiny_world(std::size_t distractors = 0, std::uint64_t seed = 10) {
  world::DiskWorldConfig c = world::DiskWorldConfig::for_size(8);
  c.T = 4;
  c.num_distractors = distractors;
  c.seed = seed;
  return c;
}

ModelSpec tiny_spec(ModelKind kind) {
  ModelSpec spec;
  spec.kind = kind;
  spec.encoder = nets::tracking_encoder_tiny();
  spec.filter = world::tracking_filter_spec(tiny_world());
  return spec;
}

world::SequenceDataset tiny_data(std::size_t count = 5) { return world::generate_tracking_dataset(tiny_world(), count); }

TrainConfig quick(Stage stage, std::size_t epochs = 1) {
  TrainConfig c;
  c.stage = stage;
  c.epochs = epochs;
  c.batch_size = 2;
  c.seed = 3;
  c.threads = 1;
  return c;
}

double mean_stage_loss(const Checkpoint& ckpt, Stage stage, const world::SequenceDataset& data) {
  double s = 0.0;
  for (const auto& seq : data.sequences) s += stage_loss(ckpt, stage, seq);
  return s / static_cast<double>(data.sequences.size());
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("bkf_test_training_" + name);
}

// Every tensor the stage does not declare as trainable is bit-identical, and
// at least one declared tensor moved.
void expect_isolated(const Checkpoint& before, const Checkpoint& after, Stage stage) {
  bool moved = false;
  ASSERT_EQ(before.params.names(), after.params.names());
  for (const auto& name : before.params.names()) {
    const bool same = before.params.get(name) == after.params.get(name);
    if (stage_trains(stage, name)) {
      moved = moved || !same;
    } else {
      EXPECT_TRUE(same) << to_string(stage) << " modified " << name;
    }
  }
  EXPECT_TRUE(moved) << to_string(stage) << " changed nothing";
}

TEST(MseLoss, ZeroResidual) {
  Tape t;
  const Tensor y = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const NodeId out[] = {t.constant(y)};
  EXPECT_EQ(t.value(mse_sequence_loss(t, out, std::span(&y, 1))).item(), 0.0);
}

TEST(MseLoss, HandExample) {
  Tape t;
  const Tensor y = Tensor::matrix(1, 2, {0, 0});
  const NodeId out[] = {t.constant(Tensor::matrix(1, 2, {3, 4}))};
  EXPECT_EQ(t.value(mse_sequence_loss(t, out, std::span(&y, 1))).item(), 12.5);
}

TEST(MseLoss, DuplicatedDataLeavesLossUnchanged) {
  std::mt19937_64 rng(1);
  const Tensor a = testutil::random_tensor(rng, {3, 2}), b = testutil::random_tensor(rng, {3, 2});
  Tape t;
  const NodeId one[] = {t.constant(a)};
  const NodeId two[] = {t.constant(a), t.constant(a)};
  const Tensor labels[] = {b, b};
  EXPECT_NEAR(t.value(mse_sequence_loss(t, one, std::span(labels, 1))).item(),
              t.value(mse_sequence_loss(t, two, labels)).item(), 1e-15);
}

TEST(MseLoss, ShapeMismatch) {
  Tape t;
  const Tensor y = Tensor::zeros({3, 2});
  const NodeId out[] = {t.constant(Tensor::zeros({3, 3}))};
  EXPECT_THROW(mse_sequence_loss(t, out, std::span(&y, 1)), ShapeError);
}

TEST(GaussianNll, ConstantTerm) {
  Tape t;
  const NodeId loss = gaussian_nll_loss(t, t.constant(Tensor::zeros({1, 2})), t.constant(Tensor::zeros({1, 3})),
                                        Tensor::zeros({1, 2}));
  EXPECT_NEAR(t.value(loss).item(), std::log(2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(t.value(loss).item(), 1.8379, 1e-4);
}

TEST(GaussianNll, ShrinkingDiagonalDecreasesLoss) {
  double previous = 1e300;
  for (double log_diag = 0.0; log_diag >= -3.0; log_diag -= 0.5) {
    Tape t;
    const NodeId loss = gaussian_nll_loss(t, t.constant(Tensor::zeros({2, 2})),
                                          t.constant(Tensor::matrix(2, 3, {log_diag, 0.3, log_diag, log_diag, 0.3, log_diag})),
                                          Tensor::zeros({2, 2}));
    EXPECT_LT(t.value(loss).item(), previous);
    previous = t.value(loss).item();
  }
}

TEST(GaussianNll, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor target = testutil::random_tensor(rng, {4, 2});
    auto build = [&](Tape& t, std::span<const NodeId> p) { return gaussian_nll_loss(t, p[0], p[1], target); };
    const GradCheckResult r = grad_check(
        build, std::vector<Tensor>{testutil::random_tensor(rng, {4, 2}), testutil::random_tensor(rng, {4, 3}, 0.5)});
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
}

TEST(Adam, ZeroGradientKeepsParameters) {
  ParamStore p;
  p.set("a", Tensor::vector({1.0, -2.0}));
  AdamState s;
  adam_step(p, {{"a", Tensor::zeros({2})}}, s);
  EXPECT_EQ(p.get("a"), Tensor::vector({1.0, -2.0}));
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepHandEvaluation) {
  ParamStore p;
  p.set("w", Tensor::scalar(0.5));
  AdamState s;
  s.config.lr = 1e-3;
  adam_step(p, {{"w", Tensor::scalar(1.0)}}, s);
  // m̂ = g and v̂ = g², so the step is lr·g/(|g| + ε).
  EXPECT_NEAR(p.get("w").item() - 0.5, -1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, IdenticalGradientsUpdateIdentically) {
  ParamStore p;
  p.set("a", Tensor::vector({0.3, 0.3}));
  p.set("b", Tensor::vector({0.3, 0.3}));
  AdamState s;
  for (int i = 0; i < 10; ++i) adam_step(p, {{"a", Tensor::vector({0.2, -1.0})}, {"b", Tensor::vector({0.2, -1.0})}}, s);
  EXPECT_EQ(p.get("a"), p.get("b"));
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamStore p;
  p.set("ok", Tensor::scalar(1.0));
  p.set("enc/z/w", Tensor::scalar(1.0));
  AdamState s;
  try {
    adam_step(p, {{"ok", Tensor::scalar(1.0)}, {"enc/z/w", Tensor::scalar(std::nan(""))}}, s);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("enc/z/w"), std::string::npos);
  }
  EXPECT_EQ(p.get("ok").item(), 1.0);
}

TEST(Adam, ConvergesOnQuadratic) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor target = testutil::random_tensor(rng, {5}, 3.0);
    ParamStore p;
    p.set("theta", testutil::random_tensor(rng, {5}, 3.0));
    AdamState s;
    s.config.lr = 1e-2;
    for (int step = 0; step < 5000; ++step) {
      Tensor g = p.get("theta");
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (g[i] - target[i]);
      adam_step(p, {{"theta", g}}, s);
    }
    EXPECT_LT(testutil::max_abs_diff(p.get("theta"), target), 1e-3);
  }
}

TEST(Adam, GlobalNormClipping) {
  Gradients g{{"a", Tensor::vector({3.0})}, {"b", Tensor::vector({4.0})}};
  EXPECT_EQ(global_norm(g), 5.0);
  EXPECT_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-15);
  EXPECT_NEAR(g["a"].item(), 0.6, 1e-15);
}

TEST(Stages, NamesRoundTrip) {
  for (Stage s : {Stage::PretrainFF, Stage::FitPiecewiseR, Stage::PretrainMlCov, Stage::FinetuneE2E,
                  Stage::LstmPretrainRecurrent}) {
    EXPECT_EQ(parse_stage(to_string(s)), s);
  }
  EXPECT_EQ(to_string(Stage::FitPiecewiseR), "fit_piecewise_R");
  EXPECT_THROW(parse_stage("warmup"), ConfigError);
}

TEST(Stages, FinetuneWithoutPretrainingIsPrerequisiteError) {
  const Checkpoint fresh = initial_checkpoint(tiny_spec(ModelKind::BKF), 1);
  try {
    run_stage(fresh, tiny_data(), quick(Stage::FinetuneE2E));
    FAIL() << "expected PrerequisiteError";
  } catch (const PrerequisiteError& e) {
    EXPECT_NE(std::string(e.what()).find("pretrain_ff"), std::string::npos) << e.what();
  }
  EXPECT_THROW(check_prerequisites(fresh, Stage::FitPiecewiseR), PrerequisiteError);
  EXPECT_THROW(check_prerequisites(fresh, Stage::LstmPretrainRecurrent), PrerequisiteError);
  EXPECT_NO_THROW(check_prerequisites(fresh, Stage::PretrainFF));
}

TEST(Stages, IncompatibleDataNamesDimensions) {
  const Checkpoint fresh = initial_checkpoint(tiny_spec(ModelKind::Feedforward), 1);
  world::DiskWorldConfig big = tiny_world();
  big.image_size = 16;
  try {
    check_compatible(fresh.spec, world::generate_tracking_dataset(big, 1));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("16x16x3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("8x8x3"), std::string::npos) << e.what();
  }
}

TEST(Stages, PretrainFFReducesLoss) {
  const auto data = tiny_data(5);
  const Checkpoint start = initial_checkpoint(tiny_spec(ModelKind::Feedforward), 2);
  TrainConfig cfg = quick(Stage::PretrainFF, 50);
  cfg.validation_fraction = 0.0;
  const StageResult r = run_stage(start, data, cfg);
  ASSERT_EQ(r.curve.size(), 50u);
  EXPECT_LT(mean_stage_loss(r.checkpoint, Stage::PretrainFF, data), mean_stage_loss(start, Stage::PretrainFF, data));
  EXPECT_LT(r.curve.back().train_loss, r.curve.front().train_loss);
  EXPECT_TRUE(r.checkpoint.has_completed(Stage::PretrainFF));
}

TEST(Stages, EachStageTouchesOnlyItsTrainableSet) {
  const auto data = tiny_data(4);
  const Checkpoint bkf0 = initial_checkpoint(tiny_spec(ModelKind::BKF), 5);
  const Checkpoint bkf1 = run_stage(bkf0, data, quick(Stage::PretrainFF)).checkpoint;
  expect_isolated(bkf0, bkf1, Stage::PretrainFF);
  const Checkpoint bkf2 = run_stage(bkf1, data, quick(Stage::PretrainMlCov)).checkpoint;
  expect_isolated(bkf1, bkf2, Stage::PretrainMlCov);
  const Checkpoint bkf3 = run_stage(bkf2, data, quick(Stage::FinetuneE2E)).checkpoint;
  expect_isolated(bkf2, bkf3, Stage::FinetuneE2E);

  const Checkpoint pw0 = derive_checkpoint(bkf1, ModelKind::PiecewiseKF, 6);
  const Checkpoint pw1 = run_stage(pw0, data, quick(Stage::FitPiecewiseR)).checkpoint;
  expect_isolated(pw0, pw1, Stage::FitPiecewiseR);

  world::EgoWorldConfig ego;
  ego.T = 4;
  ModelSpec lstm;
  lstm.kind = ModelKind::Lstm;
  lstm.encoder = nets::ego_encoder_desk();
  lstm.filter = world::ego_filter_spec(ego);
  lstm.lstm_units = 8;
  const Checkpoint l0 = initial_checkpoint(lstm, 7);
  const Checkpoint l1 = run_stage(l0, world::generate_ego_dataset(ego, 3), quick(Stage::LstmPretrainRecurrent)).checkpoint;
  expect_isolated(l0, l1, Stage::LstmPretrainRecurrent);
}

TEST(Stages, DerivedCheckpointCarriesEncoder) {
  const Checkpoint ff = initial_checkpoint(tiny_spec(ModelKind::Feedforward), 8);
  const Checkpoint bkf = derive_checkpoint(ff, ModelKind::BKF, 9);
  EXPECT_EQ(bkf.spec.kind, ModelKind::BKF);
  for (const auto& name : ff.params.names()) EXPECT_EQ(bkf.params.get(name), ff.params.get(name)) << name;
  EXPECT_TRUE(bkf.params.contains("enc/lhat/w"));
}

TEST(Stages, NonFiniteLabelsAbortWithLastGood) {
  auto data = tiny_data(3);
  for (auto& seq : data.sequences) seq.obs_targets[0] = std::nan("");
  const Checkpoint start = initial_checkpoint(tiny_spec(ModelKind::Feedforward), 10);
  try {
    run_stage(start, data, quick(Stage::PretrainFF));
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.last_good().params, start.params);
  }
}

TEST(Stages, TrainingIsDeterministicAcrossThreads) {
  const auto data = tiny_data(4);
  const Checkpoint start = initial_checkpoint(tiny_spec(ModelKind::Feedforward), 11);
  TrainConfig one = quick(Stage::PretrainFF, 2);
  TrainConfig many = one;
  many.threads = 3;
  EXPECT_EQ(run_stage(start, data, one).checkpoint.params, run_stage(start, data, many).checkpoint.params);
}

TEST(Evaluate, PerfectPredictorHasZeroRms) {
  auto data = tiny_data(3);
  const Checkpoint ckpt = initial_checkpoint(tiny_spec(ModelKind::BKF), 12);
  for (auto& seq : data.sequences) seq.labels = predict(ckpt, seq);
  const EvalReport r = evaluate(ckpt, data, 1);
  EXPECT_EQ(r.rms, 0.0);
  EXPECT_EQ(r.rms_std, 0.0);
}

TEST(Evaluate, CenterPredictorGivesLabelDispersion) {
  const auto data = tiny_data(6);
  Checkpoint ckpt = initial_checkpoint(tiny_spec(ModelKind::Feedforward), 13);
  for (double& v : ckpt.params.get_mutable("enc/z/w").data()) v = 0.0;
  for (double& v : ckpt.params.get_mutable("enc/z/b").data()) v = 0.0;
  double sq = 0.0;
  std::size_t frames = 0;
  std::vector<double> per;
  for (const auto& seq : data.sequences) {
    double s = 0.0;
    for (double v : seq.labels.data()) s += v * v;
    sq += s;
    frames += seq.length();
    per.push_back(std::sqrt(s / double(seq.length())));
  }
  const EvalReport r = evaluate(ckpt, data, 1);
  EXPECT_NEAR(r.rms, std::sqrt(sq / double(frames)), 1e-12);
  ASSERT_EQ(r.per_sequence.size(), per.size());
  for (std::size_t i = 0; i < per.size(); ++i) EXPECT_NEAR(r.per_sequence[i], per[i], 1e-12);
  EXPECT_EQ(r.sequences, 6u);
  EXPECT_EQ(r.difficulty, "distractors=0");
}

TEST(Evaluate, RepeatableAndSideEffectFree) {
  const auto data = tiny_data(3);
  const Checkpoint ckpt = initial_checkpoint(tiny_spec(ModelKind::BKF), 14);
  const auto path = temp_path("side_effects.bkft");
  save_checkpoint(ckpt, path);
  const auto before = tensorpack::read_file(path);
  const EvalReport a = evaluate(ckpt, data, 1);
  const EvalReport b = evaluate(ckpt, data, 2);
  save_checkpoint(ckpt, path);
  EXPECT_EQ(tensorpack::read_file(path), before);
  EXPECT_EQ(a.rms, b.rms);
  EXPECT_EQ(a.per_sequence, b.per_sequence);
  EXPECT_EQ(a.parameter_count, ckpt.params.scalar_count());
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}

TEST(Evaluate, DimensionMismatch) {
  const Checkpoint ckpt = initial_checkpoint(tiny_spec(ModelKind::BKF), 15);
  world::EgoWorldConfig ego;
  ego.image_size = 8;
  ego.T = 2;
  EXPECT_THROW(evaluate(ckpt, world::generate_ego_dataset(ego, 1), 1), ShapeError);
}

TEST(ClutterSweep, RowsPerModelAndLevel) {
  const std::vector<std::pair<std::string, Checkpoint>> models{
      {"feedforward", initial_checkpoint(tiny_spec(ModelKind::Feedforward), 16)},
      {"bkf", initial_checkpoint(tiny_spec(ModelKind::BKF), 17)}};
  const auto rows = clutter_sweep(models, {0, 9, 99}, tiny_world(0, 500), 2, 1);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& row : rows) EXPECT_EQ(row.report.difficulty, "distractors=" + std::to_string(row.level));
}

TEST(ClutterSweep, SingleLevelReducesToEvaluate) {
  const Checkpoint ckpt = initial_checkpoint(tiny_spec(ModelKind::BKF), 18);
  world::DiskWorldConfig base = tiny_world(3, 600);
  const auto rows = clutter_sweep({{"bkf", ckpt}}, {3}, base, 2, 1);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].report.rms, evaluate(ckpt, world::generate_tracking_dataset(base, 2), 1).rms);
}

TEST(CheckpointFile, RoundTrip) {
  Checkpoint ckpt = initial_checkpoint(tiny_spec(ModelKind::BKF), 19);
  ckpt.completed = {Stage::PretrainFF, Stage::PretrainMlCov};
  const auto path = temp_path("roundtrip.bkft");
  save_checkpoint(ckpt, path);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.params, ckpt.params);
  EXPECT_EQ(back.completed, ckpt.completed);
  EXPECT_EQ(spec_to_json(back.spec), spec_to_json(ckpt.spec));
  EXPECT_EQ(back.spec.encoder, ckpt.spec.encoder);
  const auto data = tiny_data(2);
  EXPECT_EQ(evaluate(back, data, 1).rms, evaluate(ckpt, data, 1).rms);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}

TEST(CheckpointFile, MissingSidecarIsIoError) {
  const auto path = temp_path("no_sidecar.bkft");
  save_checkpoint(initial_checkpoint(tiny_spec(ModelKind::Feedforward), 20), path);
  std::filesystem::remove(path.string() + ".json");
  EXPECT_THROW(load_checkpoint(path), IoError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace bkf::train
