#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "bkf/cli/commands.hpp"
#include "bkf/cli/config.hpp"
#include "bkf/cli/file_lock.hpp"
#include "bkf/cli/metrics_csv.hpp"
#include "bkf/pack.hpp"
#include "bkf/training.hpp"
#include "bkf/world.hpp"

namespace bkf::cli {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("bkf_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write(dir_ / "tiny.cfg",
          "# tiny tracking experiment\n"
          "task = tracking\n"
          "model = feedforward\n"
          "encoder = tiny\n"
          "seed = 7\n"
          "count = 5\n"
          "world.image_size = 8\n"
          "world.T = 4\n"
          "train.epochs = 3\n"
          "train.batch_size = 2\n"
          "train.threads = 1\n");
  }
  void TearDown() override { fs::remove_all(dir_); }

  static void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

  fs::path path(const std::string& name) const { return dir_ / name; }

  RunResult run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt";
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" BKF_TOOL_PATH "' " + args + " >'" + out.string() +
                            "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  // Trains a feedforward checkpoint with pretrain_ff on a fresh dataset.
  void make_ff_checkpoint(const std::string& name) {
    ASSERT_EQ(run("gen-data tiny.cfg --out train.bkft").code, 0);
    const RunResult r = run("train tiny.cfg --stage pretrain_ff --data train.bkft --out-checkpoint " + name);
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path dir_;
};

TEST_F(CliTest, HelpExitsZero) {
  const RunResult r = run("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("gen-data"), std::string::npos);
}

TEST_F(CliTest, MissingSubcommandIsUsageError) { EXPECT_EQ(run("").code, 1); }

TEST_F(CliTest, GenDataWritesDatasetAndManifest) {
  const RunResult r = run("gen-data tiny.cfg --out d.bkft");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ds = world::load_dataset(path("d.bkft"));
  EXPECT_EQ(ds.sequences.size(), 5u);
  EXPECT_EQ(ds.seed, 7u);
  EXPECT_EQ(ds.sequences[0].images.dim(1), 8u);
  const std::string manifest = slurp(path("d.bkft.json"));
  EXPECT_NE(manifest.find("\"seed\": 7"), std::string::npos) << manifest;
  EXPECT_NE(manifest.find("\"task\": \"tracking\""), std::string::npos) << manifest;
}

TEST_F(CliTest, GenDataIsDeterministic) {
  ASSERT_EQ(run("gen-data tiny.cfg --out a.bkft").code, 0);
  ASSERT_EQ(run("gen-data tiny.cfg --out b.bkft").code, 0);
  EXPECT_EQ(slurp(path("a.bkft")), slurp(path("b.bkft")));
  ASSERT_EQ(run("gen-data tiny.cfg --out c.bkft --seed 8 --count 2").code, 0);
  const auto c = world::load_dataset(path("c.bkft"));
  EXPECT_EQ(c.sequences.size(), 2u);
  EXPECT_EQ(c.seed, 8u);
}

TEST_F(CliTest, GenDataMatchesInProcessGeneration) {
  ASSERT_EQ(run("gen-data tiny.cfg --out d.bkft").code, 0);
  const ExperimentConfig cfg = load_config(path("tiny.cfg"));
  EXPECT_EQ(world::load_dataset(path("d.bkft")), world::generate_tracking_dataset(cfg.disk, 5));
}

TEST_F(CliTest, UnknownConfigKeyNamesTheKey) {
  write(path("bad.cfg"), "task = tracking\nworld.spring_kk = 0.1\n");
  const RunResult r = run("gen-data bad.cfg --out d.bkft");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("world.spring_kk"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("d.bkft")));
}

TEST_F(CliTest, MissingConfigIsIoError) {
  const RunResult r = run("gen-data nope.cfg --out d.bkft");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope.cfg"), std::string::npos) << r.err;
}

TEST_F(CliTest, LockedOutputIsRefused) {
  OutputLock held(path("d.bkft"));
  const RunResult r = run("gen-data tiny.cfg --out d.bkft");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("locked"), std::string::npos) << r.err;
}

TEST_F(CliTest, TrainWritesCheckpointAndLossCurve) {
  ASSERT_EQ(run("gen-data tiny.cfg --out d.bkft").code, 0);
  const RunResult r = run("train tiny.cfg --stage pretrain_ff --data d.bkft --out-checkpoint ff.ckpt --epochs 20");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("final loss "), std::string::npos) << r.out;

  const train::Checkpoint ck = train::load_checkpoint(path("ff.ckpt"));
  EXPECT_EQ(ck.spec.kind, nets::ModelKind::Feedforward);
  EXPECT_TRUE(ck.has_completed(train::Stage::PretrainFF));

  const auto rows = parse_csv(slurp(path("ff.ckpt.loss.csv")));
  ASSERT_EQ(rows.size(), 21u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"epoch", "train_loss", "validation_loss"}));
  EXPECT_EQ(rows[20][0], "20");
  EXPECT_LT(std::stod(rows[20][1]), std::stod(rows[1][1]));
  EXPECT_NE(r.out.find("final loss " + rows[20][1]), std::string::npos) << r.out;
}

TEST_F(CliTest, TrainMatchesInProcessStage) {
  ASSERT_EQ(run("gen-data tiny.cfg --out d.bkft").code, 0);
  ASSERT_EQ(run("train tiny.cfg --stage pretrain_ff --data d.bkft --out-checkpoint ff.ckpt").code, 0);
  const ExperimentConfig cfg = load_config(path("tiny.cfg"));
  const auto expected = train::run_stage(train::initial_checkpoint(cfg.model_spec(), cfg.seed),
                                         world::load_dataset(path("d.bkft")),
                                         cfg.train_config(train::Stage::PretrainFF));
  const train::Checkpoint got = train::load_checkpoint(path("ff.ckpt"));
  for (const auto& name : expected.checkpoint.params.names())
    EXPECT_EQ(got.params.get(name), expected.checkpoint.params.get(name)) << name;
}

TEST_F(CliTest, MissingPrerequisiteNamesTheStage) {
  ASSERT_EQ(run("gen-data tiny.cfg --out d.bkft").code, 0);
  std::string text = slurp(path("tiny.cfg"));
  text.replace(text.find("model = feedforward"), 19, "model = bkf");
  write(path("bkf.cfg"), text);
  const RunResult r = run("train bkf.cfg --stage finetune_e2e --data d.bkft --out-checkpoint x.ckpt");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("finetune_e2e"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("pretrain_ff"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("x.ckpt")));
}

TEST_F(CliTest, UnknownStageIsUsageError) {
  ASSERT_EQ(run("gen-data tiny.cfg --out d.bkft").code, 0);
  const RunResult r = run("train tiny.cfg --stage warmup --data d.bkft --out-checkpoint x.ckpt");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("warmup"), std::string::npos) << r.err;
}

TEST_F(CliTest, DerivesKindFromInitCheckpoint) {
  make_ff_checkpoint("ff.ckpt");
  std::string text = slurp(path("tiny.cfg"));
  text.replace(text.find("model = feedforward"), 19, "model = bkf");
  write(path("bkf.cfg"), text);
  const RunResult r =
      run("train bkf.cfg --stage pretrain_ml_cov --data train.bkft --init ff.ckpt --out-checkpoint ml.ckpt");
  ASSERT_EQ(r.code, 0) << r.err;
  const train::Checkpoint ck = train::load_checkpoint(path("ml.ckpt"));
  EXPECT_EQ(ck.spec.kind, nets::ModelKind::BKF);
  EXPECT_TRUE(ck.has_completed(train::Stage::PretrainFF));
  EXPECT_TRUE(ck.has_completed(train::Stage::PretrainMlCov));
}

TEST_F(CliTest, ModelFlagOverridesConfig) {
  make_ff_checkpoint("ff.ckpt");
  const RunResult r = run(
      "train tiny.cfg --model piecewise --stage fit_piecewise_R --data train.bkft --init ff.ckpt --out-checkpoint pw.ckpt");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(train::load_checkpoint(path("pw.ckpt")).spec.kind, nets::ModelKind::PiecewiseKF);
  EXPECT_EQ(run("train tiny.cfg --stage pretrain_ff --data train.bkft --lr 0 --out-checkpoint x.ckpt").code, 1);
  EXPECT_EQ(run("train tiny.cfg --model gru --stage pretrain_ff --data train.bkft --out-checkpoint x.ckpt").code, 1);
}

TEST_F(CliTest, DivergenceExitsThreeAndKeepsLastGood) {
  const ExperimentConfig cfg = load_config(path("tiny.cfg"));
  auto ds = world::generate_tracking_dataset(cfg.disk, 4);
  ds.sequences[1].obs_targets[0] = std::numeric_limits<double>::quiet_NaN();
  world::save_dataset(ds, path("nan.bkft"));
  const RunResult r = run("train tiny.cfg --stage pretrain_ff --data nan.bkft --out-checkpoint x.ckpt");
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_FALSE(fs::exists(path("x.ckpt")));
  ASSERT_TRUE(fs::exists(path("x.ckpt.last_good")));
  const train::Checkpoint good = train::load_checkpoint(path("x.ckpt.last_good"));
  const train::Checkpoint init = train::initial_checkpoint(cfg.model_spec(), cfg.seed);
  for (const auto& name : init.params.names()) EXPECT_EQ(good.params.get(name), init.params.get(name)) << name;
}

TEST_F(CliTest, EvalReproducesInProcessReport) {
  make_ff_checkpoint("ff.ckpt");
  ASSERT_EQ(run("gen-data tiny.cfg --out test.bkft --seed 100").code, 0);
  const RunResult r = run("eval ff.ckpt --data test.bkft --out-csv m.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = train::evaluate(train::load_checkpoint(path("ff.ckpt")), world::load_dataset(path("test.bkft")));
  char expected[128];
  std::snprintf(expected, sizeof expected, "rms=%.17g rms_std=%.17g", report.rms, report.rms_std);
  EXPECT_NE(r.out.find(expected), std::string::npos) << r.out << "\nexpected " << expected;
}

TEST_F(CliTest, EvalAppendsOneRowPerCall) {
  make_ff_checkpoint("ff.ckpt");
  ASSERT_EQ(run("eval ff.ckpt --data train.bkft --out-csv m.csv").code, 0);
  const auto first = parse_csv(slurp(path("m.csv")));
  ASSERT_EQ(first.size(), 2u);
  EXPECT_EQ(first[0][0], "model");
  EXPECT_EQ(first[1][0], "ff");
  EXPECT_EQ(first[1][1], "feedforward");
  EXPECT_EQ(first[1][3], "distractors=0");
  EXPECT_EQ(first[1][6], "5");
  EXPECT_EQ(first[1][7], "7");
  ASSERT_EQ(run("eval ff.ckpt --data train.bkft --out-csv m.csv --name \"ff, again\"").code, 0);
  const auto second = parse_csv(slurp(path("m.csv")));
  ASSERT_EQ(second.size(), 3u);
  EXPECT_EQ(second[1], first[1]);
  EXPECT_EQ(second[2][0], "ff, again");
}

TEST_F(CliTest, EvalDimensionMismatchIsConfigError) {
  make_ff_checkpoint("ff.ckpt");
  write(path("big.cfg"), "task = tracking\nseed = 1\nworld.image_size = 16\nworld.T = 3\n");
  ASSERT_EQ(run("gen-data big.cfg --out big.bkft --count 2").code, 0);
  const RunResult r = run("eval ff.ckpt --data big.bkft --out-csv m.csv");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("16x16x3"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("m.csv")) && line_count(slurp(path("m.csv"))) > 1);

  write(path("ego.cfg"), "task = ego\nseed = 1\nego.image_size = 8\nego.T = 3\n");
  ASSERT_EQ(run("gen-data ego.cfg --out ego.bkft --count 2").code, 0);
  const RunResult e = run("eval ff.ckpt --data ego.bkft --out-csv m.csv");
  EXPECT_EQ(e.code, 1);
  EXPECT_NE(e.err.find("ego"), std::string::npos) << e.err;
}

TEST_F(CliTest, EvalCorruptDatasetIsFormatError) {
  make_ff_checkpoint("ff.ckpt");
  std::string bytes = slurp(path("train.bkft"));
  bytes[bytes.size() / 2] ^= 0x10;
  std::ofstream(path("bad.bkft"), std::ios::binary) << bytes;
  const RunResult r = run("eval ff.ckpt --data bad.bkft --out-csv m.csv");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("checksum"), std::string::npos) << r.err;
}

TEST_F(CliTest, SweepWritesModelsTimesLevelsRows) {
  make_ff_checkpoint("a.ckpt");
  ASSERT_EQ(run("train tiny.cfg --stage pretrain_ff --data train.bkft --out-checkpoint b.ckpt --epochs 1").code, 0);
  const std::string args = "sweep tiny.cfg --model a=a.ckpt --model b=b.ckpt --levels 0,1,3 --count 2 --out-csv ";
  const RunResult r = run(args + "s1.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = parse_csv(slurp(path("s1.csv")));
  ASSERT_EQ(rows.size(), 7u);
  std::vector<std::string> seen;
  for (std::size_t i = 1; i < rows.size(); ++i) seen.push_back(rows[i][0] + "@" + rows[i][3]);
  for (const char* model : {"a", "b"})
    for (const char* level : {"0", "1", "3"})
      EXPECT_NE(std::find(seen.begin(), seen.end(), std::string(model) + "@distractors=" + level), seen.end())
          << model << " " << level;
  ASSERT_EQ(run(args + "s2.csv").code, 0);
  EXPECT_EQ(slurp(path("s1.csv")), slurp(path("s2.csv")));
  // a sweep rewrites rather than appends
  ASSERT_EQ(run(args + "s1.csv").code, 0);
  EXPECT_EQ(parse_csv(slurp(path("s1.csv"))).size(), 7u);
}

TEST_F(CliTest, SweepMissingCheckpointNamesTheModel) {
  make_ff_checkpoint("a.ckpt");
  const RunResult r = run("sweep tiny.cfg --model a=a.ckpt --model lstm64=missing.ckpt --out-csv s.csv");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("lstm64"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("s.csv")));
}

TEST_F(CliTest, SweepRejectsBadLevels) {
  make_ff_checkpoint("a.ckpt");
  const RunResult r = run("sweep tiny.cfg --model a=a.ckpt --levels 0,x --out-csv s.csv");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("'x'"), std::string::npos) << r.err;
}

TEST_F(CliTest, GradcheckTinyPassesQuickly) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunResult r = run("gradcheck --scale tiny");
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_LT(seconds, 60.0);
  for (const char* group : {"ops:", "filter_unroll:", "filter_gradient:", "tiny_bkf:"})
    EXPECT_NE(r.out.find(group), std::string::npos) << group;
}

TEST_F(CliTest, GradcheckInjectedFaultNamesTheOp) {
  for (const char* op : {"matmul", "conv2d", "spd_solve", "response_norm"}) {
    const RunResult r = run(std::string("gradcheck --inject-fault ") + op);
    EXPECT_EQ(r.code, 4) << op;
    EXPECT_NE(r.err.find(op), std::string::npos) << r.err;
  }
}

TEST_F(CliTest, GradcheckUnknownScaleIsUsageError) {
  const RunResult r = run("gradcheck --scale huge");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("huge"), std::string::npos) << r.err;
}

TEST(ParseLevels, AcceptsListsRejectsJunk) {
  EXPECT_EQ(parse_levels("0,9,99"), (std::vector<std::size_t>{0, 9, 99}));
  EXPECT_EQ(parse_levels("4"), (std::vector<std::size_t>{4}));
  EXPECT_THROW(parse_levels(""), ConfigError);
  EXPECT_THROW(parse_levels("1,,2"), ConfigError);
  EXPECT_THROW(parse_levels("-1"), ConfigError);
  EXPECT_THROW(parse_levels("3x"), ConfigError);
}

TEST(RunGuarded, MapsErrorsToExitCodes) {
  std::ostringstream err;
  EXPECT_EQ(run_guarded([] { return 0; }, err), 0);
  EXPECT_EQ(run_guarded([]() -> int { throw ConfigError("c"); }, err), 1);
  EXPECT_EQ(run_guarded([]() -> int { throw ShapeError("s"); }, err), 1);
  EXPECT_EQ(run_guarded([]() -> int { throw train::PrerequisiteError("p"); }, err), 1);
  EXPECT_EQ(run_guarded([]() -> int { throw IoError("i"); }, err), 2);
  EXPECT_EQ(run_guarded([]() -> int { throw FormatError("f"); }, err), 2);
  EXPECT_EQ(run_guarded([]() -> int { throw NumericError("n"); }, err), 3);
  EXPECT_EQ(run_guarded([]() -> int { throw train::DivergenceError("d", {}); }, err), 3);
  EXPECT_NE(err.str().find("c"), std::string::npos);
}

}  // namespace
}  // namespace bkf::cli
