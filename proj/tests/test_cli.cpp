#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult cli(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / ("nvist_cli_log_" + std::to_string(::getpid()));
  const std::string cmd = std::string(NVIST_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  fs::remove(log);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() / ("nvist_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  void TearDown() override { fs::remove_all(root); }
  std::string path(const std::string& name) const { return (root / name).string(); }

  fs::path root;
};

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("gen-data --out " + path("d") + " --scenes 0").code, 2);
  EXPECT_FALSE(fs::exists(root / "d"));
  EXPECT_EQ(cli("verify --suite nonsense").code, 2);
}

TEST_F(CliTest, HelpExitsZero) { EXPECT_EQ(cli("--help").code, 0); }

TEST_F(CliTest, GenDataIsDeterministic) {
  const std::string common = " --scenes 3 --views 3 --size 8 --seed 4";
  ASSERT_EQ(cli("gen-data --out " + path("a") + common).code, 0);
  ASSERT_EQ(cli("gen-data --out " + path("b") + common).code, 0);
  EXPECT_EQ(slurp(root / "a" / "manifest.json"), slurp(root / "b" / "manifest.json"));
  EXPECT_EQ(slurp(root / "a" / "images" / "scene_0002" / "1.ppm"), slurp(root / "b" / "images" / "scene_0002" / "1.ppm"));
}

TEST_F(CliTest, UnknownConfigKeyIsRejected) {
  ASSERT_EQ(cli("gen-data --out " + path("d") + " --scenes 2 --views 3 --size 8").code, 0);
  std::ofstream(root / "bad.cfg") << "[train]\nsteps = 2\nlearning_rat = 0.1\n";
  const CliResult r = cli("train --config " + path("bad.cfg") + " --data " + path("d") + " --out " + path("run") +
                    " --preset tiny");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("learning_rat"), std::string::npos) << r.output;
}

TEST_F(CliTest, MissingCheckpointExitsThreeWithoutOutputs) {
  ASSERT_EQ(cli("gen-data --out " + path("d") + " --scenes 2 --views 3 --size 8").code, 0);
  const CliResult r = cli("render --checkpoint " + path("none.nvst") + " --dataset " + path("d") +
                    " --scene scene_0000 --view 0 --orbit 3 --out " + path("views"));
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_FALSE(fs::exists(root / "views"));
}

TEST_F(CliTest, TrainRenderEvalRoundTrip) {
  // SSIM needs at least 11x11 images, so the tiny preset is widened to 16x16.
  ASSERT_EQ(cli("gen-data --out " + path("d") + " --scenes 2 --views 3 --size 16 --holdout-stride 2").code, 0);
  std::ofstream(root / "run.cfg") << "[encoder]\nimage_height = 16\nimage_width = 16\n";
  const CliResult t = cli("--threads 1 train --config " + path("run.cfg") + " --data " + path("d") + " --out " +
                          path("run") + " --preset tiny --steps 4 --checkpoint-every 2 --pixels 16");
  ASSERT_EQ(t.code, 0) << t.output;
  EXPECT_TRUE(fs::exists(root / "run" / "checkpoint_000002.nvst"));
  EXPECT_TRUE(fs::exists(root / "run" / "latest.nvst"));
  EXPECT_TRUE(fs::exists(root / "run" / "config.resolved.cfg"));
  std::ifstream csv(root / "run" / "metrics.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 5u);

  const CliResult r = cli("render --checkpoint " + path("run/latest.nvst") + " --dataset " + path("d") +
                    " --scene scene_0000 --view 0 --orbit 3 --out " + path("views"));
  ASSERT_EQ(r.code, 0) << r.output;
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%03d", i);
    EXPECT_TRUE(fs::exists(root / "views" / ("rgb_" + std::string(name) + ".ppm")));
    EXPECT_TRUE(fs::exists(root / "views" / ("depth_" + std::string(name) + ".ppm")));
    EXPECT_TRUE(fs::exists(root / "views" / ("acc_" + std::string(name) + ".ppm")));
  }
  EXPECT_FALSE(fs::exists(root / "views" / "rgb_003.ppm"));

  const CliResult e = cli("eval --checkpoint " + path("run/latest.nvst") + " --data " + path("d") + " --report " +
                    path("report.json"));
  ASSERT_EQ(e.code, 0) << e.output;
  EXPECT_NE(slurp(root / "report.json").find("psnr"), std::string::npos);
}

TEST_F(CliTest, ImageSizeMismatchExitsFour) {
  ASSERT_EQ(cli("gen-data --out " + path("d8") + " --scenes 2 --views 3 --size 8").code, 0);
  ASSERT_EQ(cli("gen-data --out " + path("d16") + " --scenes 2 --views 3 --size 16 --holdout-stride 2").code, 0);
  ASSERT_EQ(cli("train --data " + path("d8") + " --out " + path("run") + " --preset tiny --steps 1").code, 0);
  EXPECT_EQ(cli("eval --checkpoint " + path("run/latest.nvst") + " --data " + path("d16")).code, 4);
  EXPECT_EQ(cli("render --checkpoint " + path("run/latest.nvst") + " --dataset " + path("d16") +
                " --scene scene_0000 --view 0 --orbit 2 --out " + path("views")).code, 4);
  EXPECT_FALSE(fs::exists(root / "views"));
  EXPECT_EQ(cli("train --data " + path("d16") + " --out " + path("run2") + " --preset tiny --steps 1").code, 4);
}

TEST_F(CliTest, CorruptCheckpointExitsThree) {
  std::ofstream(root / "bad.nvst") << "not a checkpoint";
  ASSERT_EQ(cli("gen-data --out " + path("d") + " --scenes 2 --views 3 --size 8").code, 0);
  EXPECT_EQ(cli("eval --checkpoint " + path("bad.nvst") + " --data " + path("d") + " --split train").code, 3);
}

TEST_F(CliTest, ParamCountPaperPreset) {
  const CliResult r = cli("param-count --preset paper");
  ASSERT_EQ(r.code, 0);
  for (const char* v : {"576", "816", "288", "96", "85105920", "136238464", "7023"}) {
    EXPECT_NE(r.output.find(v), std::string::npos) << v;
  }
}

}  // namespace
