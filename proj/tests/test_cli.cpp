#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Run {
  int rc = -1;
  std::string out;
};

Run run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" CGINVERT_CLI_PATH "\" " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t got;
  while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), got);
  const int status = pclose(pipe);
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string c; std::getline(ss, c, ',');) out.push_back(c);
  return out;
}

double number_after(const std::string& text, const std::string& label) {
  std::smatch m;
  if (!std::regex_search(text, m, std::regex(label + " ([-+0-9.eE]+)"))) return std::nan("");
  return std::stod(m[1]);
}

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("cginvert_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    cfg = (dir / "run.cfg").string();
    std::ofstream(cfg) << "# small noiseless tomography problem\n"
                          "sensing.kind = radon\nsensing.side = 8\nsensing.angles = 12\n"
                          "data.n_samples = 3\nsolver.K = 20\nsolver.J = 2\n"
                          "net.K = 1\nnet.J = 2\nnet.channels = 2,1\ntrain.epochs = 5\ntrain.lr = 1e-3\n";
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string p(const std::string& name) const { return "\"" + (dir / name).string() + "\""; }
  std::string c() const { return "-c \"" + cfg + "\" "; }

  fs::path dir;
  std::string cfg;
};

}  // namespace

TEST_F(Cli, GenDataWritesManifest) {
  const auto r = run(c() + "gen-data -o " + p("ds"));
  ASSERT_EQ(r.rc, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "ds" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "ds" / "y_2.f64"));
  EXPECT_EQ(fs::file_size(dir / "ds" / "c_0.f64"), 64u * 8u);
}

TEST_F(Cli, MissingSensingKindIsNamed) {
  std::ofstream(dir / "bad.cfg") << "sensing.side = 8\n";
  const auto r = run("-c " + p("bad.cfg") + " gen-data -o " + p("ds"));
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.out.find("sensing.kind"), std::string::npos) << r.out;
}

TEST_F(Cli, UnknownKeyIsNamed) {
  const auto r = run(c() + "-s solver.KK=3 gen-data -o " + p("ds"));
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.out.find("solver.KK"), std::string::npos) << r.out;
  EXPECT_EQ(run(c() + "gen-data").rc, 2);
}

TEST_F(Cli, SameConfigSameFingerprint) {
  ASSERT_EQ(run(c() + "gen-data -o " + p("a")).rc, 0);
  ASSERT_EQ(run(c() + "gen-data -o " + p("b")).rc, 0);
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
  EXPECT_EQ(slurp(dir / "a" / "y_1.f64"), slurp(dir / "b" / "y_1.f64"));
}

TEST_F(Cli, SeedFlagAndEnvironmentFallback) {
  const auto a = run(c() + "--seed 5 gen-data -o " + p("a"));
  const auto b = run(c() + "gen-data -o " + p("b"), "CG_INVERT_SEED=5");
  const auto d = run(c() + "--seed 6 gen-data -o " + p("d"));
  ASSERT_EQ(a.rc, 0);
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
  EXPECT_NE(slurp(dir / "a" / "manifest.json"), slurp(dir / "d" / "manifest.json"));
  EXPECT_EQ(run(c() + "gen-data -o " + p("e"), "CG_INVERT_SEED=x").rc, 2);
}

TEST_F(Cli, SolveNoiselessInstance) {
  ASSERT_EQ(run(c() + "gen-data -o " + p("ds")).rc, 0);
  const auto r = run(c() + "solve -d " + p("ds") + " -o " + p("out"));
  ASSERT_EQ(r.rc, 0) << r.out;
  const auto rows = lines(slurp(dir / "out" / "metrics.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "id,psnr,ssim,F_final,stationarity_u,stationarity_z,iters,seconds");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto cells = split(rows[i]);
    ASSERT_EQ(cells.size(), 8u);
    const double psnr = std::stod(cells[1]);
    EXPECT_TRUE(std::isfinite(psnr));
    EXPECT_GT(psnr, 20.0);
    EXPECT_EQ(cells[7], "0");
  }
  // K (J + 1) + 1 trace records plus the header
  EXPECT_EQ(lines(slurp(dir / "out" / "trace_1.csv")).size(), 20u * 3u + 1u + 1u);
  EXPECT_TRUE(fs::exists(dir / "out" / "recon_0.pgm"));
  EXPECT_EQ(fs::file_size(dir / "out" / "recon_0.f64"), 64u * 8u);
}

TEST_F(Cli, SolveIsDeterministicAcrossRunsAndJobs) {
  ASSERT_EQ(run(c() + "gen-data -o " + p("ds")).rc, 0);
  ASSERT_EQ(run(c() + "solve -d " + p("ds") + " -o " + p("o1")).rc, 0);
  ASSERT_EQ(run(c() + "solve -d " + p("ds") + " -o " + p("o2")).rc, 0);
  ASSERT_EQ(run(c() + "--jobs 3 solve -d " + p("ds") + " -o " + p("o3")).rc, 0);
  const std::string m1 = slurp(dir / "o1" / "metrics.csv");
  EXPECT_EQ(m1, slurp(dir / "o2" / "metrics.csv"));
  EXPECT_EQ(m1, slurp(dir / "o3" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "o1" / "trace_2.csv"), slurp(dir / "o3" / "trace_2.csv"));
}

TEST_F(Cli, FingerprintMismatch) {
  ASSERT_EQ(run(c() + "gen-data -o " + p("ds")).rc, 0);
  const auto r = run(c() + "-s sensing.angles=13 solve -d " + p("ds") + " -o " + p("out"));
  EXPECT_EQ(r.rc, 3);
  EXPECT_NE(r.out.find("fingerprint mismatch"), std::string::npos) << r.out;
  EXPECT_EQ(run(c() + "solve -d " + p("missing") + " -o " + p("out")).rc, 3);
}

TEST_F(Cli, NumericalFailureExitCode) {
  // projected gradient steps stall at the default 1e-8 domain floor
  std::ofstream(dir / "g.cfg") << "sensing.kind = gaussian\nsensing.side = 4\nsensing.m = 10\n"
                                  "data.n_samples = 1\nzstep.method = pgd\nsolver.K = 3\n";
  ASSERT_EQ(run("-c " + p("g.cfg") + " gen-data -o " + p("ds")).rc, 0);
  const auto r = run("-c " + p("g.cfg") + " -s data.snr_db=0 gen-data -o " + p("noisy"));
  ASSERT_EQ(r.rc, 0);
  EXPECT_EQ(run("-c " + p("g.cfg") + " -s data.snr_db=0 solve -d " + p("noisy") + " -o " + p("out")).rc, 4);
}

TEST_F(Cli, TrainThenEvalReproducesTrainingMae) {
  ASSERT_EQ(run(c() + "gen-data -o " + p("ds")).rc, 0);
  const auto t = run(c() + "train -d " + p("ds") + " -o " + p("ck"));
  ASSERT_EQ(t.rc, 0) << t.out;
  EXPECT_TRUE(fs::exists(dir / "ck" / "checkpoint.json"));
  EXPECT_EQ(lines(slurp(dir / "ck" / "losses.csv")).size(), 7u);
  const auto e = run(c() + "eval -d " + p("ds") + " -k " + p("ck") + " -o " + p("ev"));
  ASSERT_EQ(e.rc, 0) << e.out;
  EXPECT_NEAR(number_after(e.out, "mae"), number_after(t.out, "final train_mae"), 1e-12);
  EXPECT_EQ(lines(slurp(dir / "ev" / "metrics.csv")).size(), 4u);
}

TEST_F(Cli, EvalRejectsMismatchedCheckpoint) {
  ASSERT_EQ(run(c() + "gen-data -o " + p("ds")).rc, 0);
  ASSERT_EQ(run(c() + "train -d " + p("ds") + " -o " + p("ck")).rc, 0);
  const auto r = run(c() + "-s net.refine=false eval -d " + p("ds") + " -k " + p("ck") + " -o " + p("ev"));
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.out.find("mismatch"), std::string::npos) << r.out;
  EXPECT_EQ(run(c() + "eval -d " + p("ds") + " -k " + p("nothing") + " -o " + p("ev")).rc, 3);
}

TEST_F(Cli, ParamCountForTheReferenceNetwork) {
  std::ofstream(dir / "reference.cfg") << "sensing.side = 32\n";
  const auto a = run("-c " + p("reference.cfg") + " train --param-count");
  ASSERT_EQ(a.rc, 0) << a.out;
  EXPECT_EQ(a.out, "726350\n");
  EXPECT_EQ(run("-c " + p("reference.cfg") + " param-count").out, "726350\n");
  EXPECT_EQ(run("-c " + p("reference.cfg") + " -s net.refine=false param-count").out, "670477\n");
}

TEST_F(Cli, DiagnoseReportsDescent) {
  ASSERT_EQ(run(c() + "gen-data -o " + p("ds")).rc, 0);
  const auto r = run(c() + "diagnose -d " + p("ds") + " --sample 1");
  ASSERT_EQ(r.rc, 0) << r.out;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(split(rows[1])[1], "yes");
  EXPECT_EQ(split(rows[1])[4], "holds");
}
