#include <gtest/gtest.h>

#include <regex>
#include <sstream>

#include "cdt/checkpoint.hpp"
#include "cdt/config.hpp"
#include "cdt/data_io.hpp"
#include "cli.hpp"
#include "test_util.hpp"

namespace cdt {
namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

TEST(Cli, VersionAndUsageErrors) {
  const auto v = run({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find("config-format 1"), std::string::npos);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"decode", "--latent", "x.cdt"}).code, cli::kUsage);
  EXPECT_EQ(run({"eval", "--manifest", "m.json"}).code, cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"encode", "--checkpoint", "/nonexistent", "--input", "x.cdt", "--output", "y.cdt"}).code,
            cli::kDataError);
  EXPECT_EQ(run({"init-config", "--set", "train.unknown=1"}).code, cli::kDataError);
}

TEST(Cli, InitConfigPrintsParseableJson) {
  const auto r = run({"init-config", "--preset", "tiny", "--set", "train.seed=4"});
  ASSERT_EQ(r.code, 0);
  const RunConfig c = config_from_json(r.out);
  EXPECT_EQ(c.model, ModelConfig::tiny());
  EXPECT_EQ(c.train.seed, 4u);
}

struct CliPipeline : ::testing::Test {
  static inline std::filesystem::path dir;
  static void SetUpTestSuite() {
    dir = test::temp_dir("cli");
    ASSERT_EQ(run({"make-data", "--out", (dir / "ds").string(), "--clips", "4", "--heldout", "2", "--resolution", "16",
                   "--frames", "5", "--seed", "3"})
                  .code,
              0);
    ASSERT_EQ(run({"init-config", "--preset", "tiny", "--out", (dir / "c.json").string(), "--set",
                   "data.manifest=" + (dir / "ds" / "manifest.json").string(), "--set", "train.total_steps=3",
                   "--set", "train.stage2_step=2", "--set", "train.eval_every=3", "--set", "train.log_every=1"})
                  .code,
              0);
    const auto r = run({"train", "--config", (dir / "c.json").string(), "--out", (dir / "run").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static std::string ckpt() { return (dir / "run" / "final").string(); }
  static std::string clip() { return (dir / "ds" / "clip_00000").string(); }
};

TEST_F(CliPipeline, TrainWritesLogsAndCheckpoint) {
  std::ifstream log(dir / "run" / "metrics.log");
  const std::string s((std::istreambuf_iterator<char>(log)), {});
  EXPECT_NE(s.find("record=train step=3 stage=2"), std::string::npos) << s;
  EXPECT_NE(s.find("record=stage step=2 stage=2 eta=0.01"), std::string::npos);
  EXPECT_NE(s.find("record=eval step=3"), std::string::npos);
  EXPECT_EQ(read_checkpoint_info(ckpt()).step, 3);
}

TEST_F(CliPipeline, DecodeOfEncodeEqualsReconstruct) {
  const auto z = (dir / "z.cdt").string(), a = (dir / "a.cdt").string(), b = (dir / "b.cdt").string();
  ASSERT_EQ(run({"encode", "--checkpoint", ckpt(), "--input", clip(), "--output", z}).code, 0);
  ASSERT_EQ(run({"decode", "--checkpoint", ckpt(), "--latent", z, "--steps", "2", "--seed", "7", "--output", a}).code, 0);
  const auto r = run({"reconstruct", "--checkpoint", ckpt(), "--input", clip(), "--steps", "3", "--seed", "7", "--output", b});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("steps=3 seed=7 denoiser_calls=3 "), std::string::npos) << r.out;
  ASSERT_EQ(run({"reconstruct", "--checkpoint", ckpt(), "--input", clip(), "--steps", "2", "--seed", "7", "--output", b}).code, 0);
  const auto ta = read_tensor(std::filesystem::path(a)), tb = read_tensor(std::filesystem::path(b));
  EXPECT_EQ(ta.shape(), (Shape{5, 16, 16, 3}));
  EXPECT_EQ(max_abs_diff(ta, tb), 0.f);
}

TEST_F(CliPipeline, StreamingEncodeAgrees) {
  const auto z1 = (dir / "z1.cdt").string(), z2 = (dir / "z2.cdt").string();
  ASSERT_EQ(run({"encode", "--checkpoint", ckpt(), "--input", clip(), "--output", z1}).code, 0);
  ASSERT_EQ(run({"encode", "--checkpoint", ckpt(), "--input", clip(), "--output", z2, "--stream"}).code, 0);
  EXPECT_LT(max_abs_diff(read_tensor(std::filesystem::path(z1)), read_tensor(std::filesystem::path(z2))), 1e-4f);
}

TEST_F(CliPipeline, EvalReportAndPassthrough) {
  const auto report = (dir / "report.txt").string();
  const auto r = run({"eval", "--checkpoint", ckpt(), "--manifest", (dir / "ds" / "manifest.json").string(), "--steps",
                      "1", "--report", report});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("record=aggregate clips=2 steps=1"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(report));
  const auto p = run({"eval", "--passthrough", "--manifest", (dir / "ds" / "manifest.json").string()});
  ASSERT_EQ(p.code, 0);
  EXPECT_NE(p.out.find("psnr=100 ssim=1 lpips=0"), std::string::npos) << p.out;
}

TEST_F(CliPipeline, ResumeContinuesFromCheckpointStep) {
  const auto r = run({"train", "--config", (dir / "c.json").string(), "--out", (dir / "run2").string(), "--resume",
                      ckpt(), "--set", "train.total_steps=4", "--set", "train.eval_every=0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("record=start step=3 "), std::string::npos);
  EXPECT_NE(r.out.find("record=train step=4 "), std::string::npos);
  EXPECT_EQ(r.out.find("record=train step=1 "), std::string::npos);
}

}  // namespace
}  // namespace cdt
