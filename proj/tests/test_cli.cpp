#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "h4d/dataio.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
};

// Runs the CLI in `dir`, capturing stdout and stderr together.
CliRun cli(const fs::path& dir, const std::string& args) {
  fs::create_directories(dir);
  const std::string cmd = "cd '" + dir.string() + "' && '" H4D_CLI "' " + args + " > out.txt 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(dir / "out.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "h4d_cli_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double metric(const std::string& out, const std::string& key) {
  const std::string tag = "metric=" + key + " value=";
  const auto at = out.find(tag);
  if (at == std::string::npos) return -1.0;
  return std::stod(out.substr(at + tag.size()));
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  const fs::path d = scratch("usage");
  const CliRun none = cli(d, "");
  EXPECT_EQ(none.code, 1);
  EXPECT_NE(none.out.find("Usage"), std::string::npos);
  EXPECT_EQ(cli(d, "no-such-command").code, 1);
  EXPECT_EQ(cli(d, "gen-data --out x").code, 1);  // seed is mandatory
  EXPECT_EQ(cli(d, "--help").code, 0);
  EXPECT_EQ(cli(d, "reconstruct --ckpt missing.hta --input missing.hta --out o.hta --seed 1").code, 2);
}

TEST(Cli, GenDataThenFitLmmLogsRetainedVariance) {
  const fs::path d = scratch("lmm");
  ASSERT_EQ(cli(d, "gen-data --seed 7 --out data/ --train 12 --test 2 --vertices 120").code, 0);
  const CliRun r = cli(d, "fit-lmm --data data/ --q 0.9");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(d / "data/basis.hta"));
  for (const std::string key : {"q_global=", "q_body="}) {
    const auto at = r.out.find(key);
    ASSERT_NE(at, std::string::npos);
    EXPECT_GT(std::stod(r.out.substr(at + key.size())), 0.9);
  }
  EXPECT_TRUE(fs::exists(d / "data/run.meta"));
  EXPECT_TRUE(fs::exists(d / "data/basis.hta.run.meta"));
}

TEST(Cli, EvalOfIdenticalFilesIsPerfect) {
  const fs::path d = scratch("eval");
  ASSERT_EQ(cli(d, "gen-data --seed 3 --out data --train 2 --test 1 --vertices 120").code, 0);
  const CliRun r = cli(d, "eval --pred data/test/seq_0000.hta --gt data/test/seq_0000.hta --model data/model.hta");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* key : {"chamfer", "pve_mm", "mpjpe_mm", "pa_mpjpe_mm", "accel_mm_per_frame2"})
    EXPECT_EQ(metric(r.out, key), 0.0) << key;
  EXPECT_EQ(metric(r.out, "iou"), 1.0);
}

TEST(Cli, RunMetaReproducesTheRunAndInputsStayUntouched) {
  const fs::path d = scratch("meta");
  ASSERT_EQ(cli(d, "gen-data --seed 5 --out data --train 6 --test 1 --vertices 120").code, 0);
  ASSERT_EQ(cli(d, "fit-lmm --data data").code, 0);
  const std::string data_hash = h4d::file_hash(d / "data/train/seq_0000.hta");
  ASSERT_EQ(cli(d, "train --stage 1 --data data --preset micro --out a.hta --seed 9 --iterations 8 --batch 4").code, 0);
  // Flags after --config override the file.
  ASSERT_EQ(cli(d, "train --config a.hta.run.meta --out b.hta").code, 0);
  EXPECT_EQ(h4d::file_hash(d / "a.hta"), h4d::file_hash(d / "b.hta"));
  // More threads, same bits.
  ASSERT_EQ(cli(d, "train --config a.hta.run.meta --out c.hta --threads 3").code, 0);
  EXPECT_EQ(h4d::file_hash(d / "a.hta"), h4d::file_hash(d / "c.hta"));
  EXPECT_EQ(h4d::file_hash(d / "data/train/seq_0000.hta"), data_hash);

  std::ofstream(d / "bad.cfg") << "seed=1\nno_such_knob=3\n";
  EXPECT_EQ(cli(d, "train --config bad.cfg --stage 1 --data data --out x.hta").code, 1);
  EXPECT_FALSE(fs::exists(d / "x.hta"));
}

TEST(Cli, ApplicationsWriteMeshesAndObjFiles) {
  const fs::path d = scratch("apps");
  ASSERT_EQ(cli(d, "gen-data --seed 2 --out data --train 4 --test 2 --vertices 120").code, 0);
  ASSERT_EQ(cli(d, "fit-lmm --data data").code, 0);
  ASSERT_EQ(cli(d, "train --stage 1 --data data --preset micro --out s1.hta --seed 1 --iterations 3").code, 0);
  const CliRun r = cli(d, "complete --mode temporal --ckpt s1.hta --input data/test/seq_0000.hta --out c.hta --seed 1 "
                       "--iterations 5 --n-sample 64 --observed 10");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("event=complete"), std::string::npos);
  ASSERT_EQ(cli(d, "export-obj --input c.hta --out objs").code, 0);
  EXPECT_TRUE(fs::exists(d / "objs/frame_0029.obj"));
  EXPECT_TRUE(fs::exists(d / "objs/run.meta"));
  EXPECT_EQ(cli(d, "complete --mode sideways --ckpt s1.hta --input c.hta --out e.hta --seed 1").code, 1);
}
