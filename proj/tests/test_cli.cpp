#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "svdformer/cli.hpp"
#include "test_util.hpp"

using namespace svdf;
using namespace svdf::cli;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, std::string* output = nullptr) {
  test_util::TempDir tmp;
  const fs::path log = tmp.path() / "out.txt";
  const std::string cmd = std::string(SVDF_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename F>
int guarded(F&& f) {
  std::ostringstream err;
  return run_guarded(std::forward<F>(f), err);
}

}  // namespace

TEST(CliSynth, WritesLayoutAndIsReproducible) {
  test_util::TempDir dir;
  std::ostringstream out;
  ASSERT_EQ(cmd_synth({dir.path() / "a", 8, 7}, out), kOk);
  ASSERT_EQ(cmd_synth({dir.path() / "b", 8, 7}, out), kOk);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "a" / "pairs")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(dir.path() / "b" / "pairs" / e.path().filename()));
  }
  EXPECT_EQ(files, 16u);
  EXPECT_TRUE(fs::exists(dir.path() / "a" / "index.json"));
  EXPECT_EQ(slurp(dir.path() / "a" / "index.json"), slurp(dir.path() / "b" / "index.json"));
}

TEST(CliSynth, ZeroCountIsUsageError) {
  test_util::TempDir dir;
  EXPECT_EQ(run_cli("synth --out " + (dir.path() / "d").string() + " --count 0 --seed 1"), kUsage);
  std::ostringstream out;
  EXPECT_EQ(guarded([&] { return cmd_synth({dir.path() / "d", 0, 1}, out); }), kUsage);
}

TEST(CliBinary, UsageAndHelp) {
  EXPECT_EQ(run_cli("--help"), kOk);
  EXPECT_EQ(run_cli("frobnicate"), kUsage);
  EXPECT_EQ(run_cli("synth --count 3"), kUsage);
  EXPECT_EQ(run_cli("eval --pred /nonexistent"), kUsage);
}

TEST(CliProject, WritesDepthFilesPerView) {
  test_util::TempDir dir;
  std::ostringstream out;
  ASSERT_EQ(cmd_synth({dir.path() / "d", 1, 3}, out), kOk);
  ProjectArgs a;
  a.input = dir.path() / "d" / "pairs" / "0000.partial.xyz";
  a.out = dir.path() / "views";
  ASSERT_EQ(cmd_project(a, out), kOk);
  for (int i = 0; i < 3; ++i) {
    const auto f = read_depth(dir.path() / "views" / ("0000.partial.view" + std::to_string(i)));
    EXPECT_EQ(f.map.width, 64u);
    EXPECT_NEAR(svdf::detail::vnorm(f.view.position), 0.7, 1e-12);
  }
}

TEST(CliProject, MalformedLineNamesLineNumber) {
  test_util::TempDir dir;
  std::ofstream(dir.path() / "bad.xyz") << "0 0 0\n# comment\n1 2\n";
  std::string output;
  EXPECT_EQ(run_cli("project --in " + (dir.path() / "bad.xyz").string() + " --out " + (dir.path() / "v").string(), &output),
            kData);
  EXPECT_NE(output.find("bad.xyz: line 3"), std::string::npos) << output;
}

TEST(CliComplete, DeterministicWithStageDumps) {
  test_util::TempDir dir;
  std::ostringstream out;
  ASSERT_EQ(cmd_synth({dir.path() / "d", 1, 4}, out), kOk);
  InitArgs init;
  init.out = dir.path() / "ckpt";
  ASSERT_EQ(cmd_init(init, out), kOk);
  CompleteArgs c;
  c.checkpoint = dir.path() / "ckpt";
  c.input = dir.path() / "d" / "pairs" / "0000.partial.xyz";
  c.output = dir.path() / "out.xyz";
  c.dump_stages = true;
  c.dump_attn = dir.path() / "attn";
  ASSERT_EQ(cmd_complete(c, out), kOk);
  EXPECT_EQ(read_xyz(dir.path() / "out.xyz").size(), 512u);
  EXPECT_EQ(read_xyz(dir.path() / "out.coarse.xyz").size(), 128u);
  EXPECT_EQ(read_xyz(dir.path() / "out.p0.xyz").size(), 128u);
  EXPECT_EQ(read_xyz(dir.path() / "out.p1.xyz").size(), 256u);
  const auto attn = read_depth(dir.path() / "attn.sdg2.similarity");
  EXPECT_EQ(attn.map.height, 256u);
  EXPECT_EQ(attn.map.width, 128u);
  const std::string first = slurp(dir.path() / "out.xyz");
  c.output = dir.path() / "again.xyz";
  c.dump_stages = false;
  c.dump_attn.reset();
  ASSERT_EQ(cmd_complete(c, out), kOk);
  EXPECT_EQ(slurp(dir.path() / "again.xyz"), first);
}

TEST(CliTrain, SmokeRunAndResume) {
  test_util::TempDir dir;
  std::ostringstream out;
  ASSERT_EQ(cmd_synth({dir.path() / "d", 2, 5}, out), kOk);
  std::ofstream(dir.path() / "cfg.json") << R"({"profile":"desk","train":{"batch_size":2}})";
  const auto start = std::chrono::steady_clock::now();
  ASSERT_EQ(run_cli("train --config " + (dir.path() / "cfg.json").string() + " --data " + (dir.path() / "d").string() +
                    " --out " + (dir.path() / "ck").string() + " --steps 1"),
            kOk);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 30.0);
  TrainArgs t;
  t.config = dir.path() / "cfg.json";
  t.data = dir.path() / "d";
  t.out = dir.path() / "ck2";
  t.resume = dir.path() / "ck";
  t.steps = 2;
  ASSERT_EQ(cmd_train(t, out), kOk);
  std::ifstream trace(dir.path() / "ck2" / "trace.csv");
  std::string header, row;
  std::getline(trace, header);
  std::getline(trace, row);
  EXPECT_EQ(header, "step,loss,lr");
  EXPECT_EQ(row.substr(0, 2), "1,");
}

TEST(CliEval, IdenticalDirsAndMeanLine) {
  test_util::TempDir dir;
  std::ostringstream out;
  ASSERT_EQ(cmd_synth({dir.path() / "d", 3, 6}, out), kOk);
  fs::create_directories(dir.path() / "pred");
  fs::create_directories(dir.path() / "gt");
  for (const char* id : {"0000", "0001", "0002"}) {
    fs::copy_file(dir.path() / "d" / "pairs" / (std::string(id) + ".complete.xyz"), dir.path() / "gt" / (std::string(id) + ".xyz"));
    fs::copy_file(dir.path() / "d" / "pairs" / (std::string(id) + ".complete.xyz"), dir.path() / "pred" / (std::string(id) + ".xyz"));
  }
  EvalArgs e;
  e.pred = dir.path() / "pred";
  e.gt = dir.path() / "gt";
  std::ostringstream report;
  ASSERT_EQ(cmd_eval(e, report), kOk);
  std::istringstream lines(report.str());
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "0000 0.000000 0.000000 0.000000 1.000000");
  EXPECT_EQ(rows[3], "MEAN 0.000000 0.000000 0.000000 1.000000");

  // Perturb one prediction: MEAN is the arithmetic mean of the rows.
  fs::copy_file(dir.path() / "d" / "pairs" / "0000.partial.xyz", dir.path() / "pred" / "0001.xyz",
                fs::copy_options::overwrite_existing);
  std::ostringstream report2;
  ASSERT_EQ(cmd_eval(e, report2), kOk);
  std::istringstream l2(report2.str());
  std::vector<std::vector<double>> values;
  while (std::getline(l2, line)) {
    std::istringstream ss(line);
    std::string id;
    ss >> id;
    values.emplace_back();
    double v;
    while (ss >> v) values.back().push_back(v);
  }
  for (std::size_t m = 0; m < 4; ++m) {
    EXPECT_NEAR(values[3][m], (values[0][m] + values[1][m] + values[2][m]) / 3, 1e-6);
  }
}

TEST(CliEval, MmdMode) {
  test_util::TempDir dir;
  std::ostringstream out;
  ASSERT_EQ(cmd_synth({dir.path() / "d", 2, 8}, out), kOk);
  fs::create_directories(dir.path() / "pred");
  fs::create_directories(dir.path() / "refs");
  fs::copy_file(dir.path() / "d" / "pairs" / "0000.complete.xyz", dir.path() / "pred" / "a.xyz");
  fs::copy_file(dir.path() / "d" / "pairs" / "0000.complete.xyz", dir.path() / "refs" / "r0.xyz");
  fs::copy_file(dir.path() / "d" / "pairs" / "0001.complete.xyz", dir.path() / "refs" / "r1.xyz");
  EvalArgs e;
  e.pred = dir.path() / "pred";
  e.metrics = {"mmd"};
  e.refs = dir.path() / "refs";
  std::ostringstream report;
  ASSERT_EQ(cmd_eval(e, report), kOk);
  EXPECT_NE(report.str().find("MMD 0.000000"), std::string::npos) << report.str();
  e.refs.reset();
  EXPECT_EQ(guarded([&] { return cmd_eval(e, report); }), kUsage);
}

TEST(CliGradcheck, PassesAndFlagsInjectedFault) {
  GradcheckArgs a;
  a.instances = 1;
  std::ostringstream out;
  const auto start = std::chrono::steady_clock::now();
  EXPECT_EQ(cmd_gradcheck(a, out), kOk) << out.str();
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 60.0);
  a.inject_fault = "softmax";
  std::ostringstream bad;
  EXPECT_EQ(cmd_gradcheck(a, bad), kNumerical);
  EXPECT_NE(bad.str().find("failed: softmax"), std::string::npos) << bad.str();
}

TEST(CliErrors, MissingFilesAreDataErrors) {
  CompleteArgs c;
  c.checkpoint = "/nonexistent/ckpt";
  c.input = "/nonexistent/in.xyz";
  c.output = "/tmp/never.xyz";
  std::ostringstream out;
  EXPECT_EQ(guarded([&] { return cmd_complete(c, out); }), kData);
}
