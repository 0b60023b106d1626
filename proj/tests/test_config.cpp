#include <cginvert/config.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace cginvert;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream is(text);
  return RunConfig::parse(is);
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfig, ParsesCommentsAndWhitespace) {
  const auto cfg = parse("# header\nsensing.kind = radon  # trailing\n\n  sensing.side=8\nsolver.K = 7\n");
  EXPECT_EQ(cfg.str("sensing.kind"), "radon");
  EXPECT_EQ(cfg.integer("sensing.side"), 8);
  EXPECT_EQ(cfg.integer("solver.K"), 7);
  EXPECT_EQ(cfg.integer("solver.J"), 1);
  EXPECT_TRUE(cfg.explicitly_set("solver.K"));
  EXPECT_FALSE(cfg.explicitly_set("solver.J"));
}

TEST(RunConfig, UnknownKeyIsNamed) {
  EXPECT_NE(error_of([] { parse("solver.KK = 3\n"); }).find("solver.KK"), std::string::npos);
  RunConfig cfg;
  EXPECT_NE(error_of([&] { cfg.apply_overrides({"net.nope=1"}); }).find("net.nope"), std::string::npos);
  EXPECT_THROW(cfg.apply_overrides({"solver.K"}), ConfigError);
  EXPECT_THROW(parse("just text\n"), ConfigError);
}

TEST(RunConfig, MissingRequiredKeyIsNamed) {
  const auto cfg = parse("sensing.side = 8\n");
  EXPECT_NE(error_of([&] { build_sensing(cfg); }).find("sensing.kind"), std::string::npos);
  EXPECT_FALSE(cfg.has("sensing.kind"));
  EXPECT_TRUE(cfg.has("sensing.side"));
}

TEST(RunConfig, OverridesWin) {
  auto cfg = parse("solver.K = 7\n");
  cfg.apply_overrides({"solver.K = 9", "reg.mu=0.5"});
  EXPECT_EQ(cfg.integer("solver.K"), 9);
  EXPECT_EQ(cfg.real("reg.mu"), 0.5);
}

TEST(RunConfig, TypedAccessors) {
  auto cfg = parse("data.snr_db = inf\nsolver.guard = off\nnet.channels = 4, 4,1\nzstep.eta = auto\nsolver.K = x\n");
  EXPECT_EQ(cfg.real("data.snr_db"), kInf);
  EXPECT_FALSE(cfg.boolean("solver.guard"));
  EXPECT_EQ(cfg.int_list("net.channels"), (std::vector<int>{4, 4, 1}));
  EXPECT_FALSE(cfg.optional_real("zstep.eta").has_value());
  EXPECT_THROW(cfg.integer("solver.K"), ConfigError);
  cfg.set("train.seed", "-1");
  EXPECT_THROW(cfg.seed("train.seed"), ConfigError);
}

TEST(Builders, SensingKinds) {
  auto cfg = parse("sensing.kind = radon\nsensing.side = 32\n");
  EXPECT_EQ(build_sensing(cfg).rows(), 690);
  cfg = parse("sensing.kind = gaussian\nsensing.side = 4\nsensing.ratio = 0.5\n");
  EXPECT_EQ(build_sensing(cfg).rows(), 8);
  cfg = parse("sensing.kind = gaussian\nsensing.side = 4\n");
  EXPECT_THROW(build_sensing(cfg), ConfigError);
  cfg = parse("sensing.kind = fourier\nsensing.side = 4\n");
  EXPECT_THROW(build_sensing(cfg), ConfigError);
}

TEST(Builders, NetDefaultsAreTheReferenceNetwork) {
  const auto net = build_net_config(RunConfig{});
  EXPECT_EQ(param_count(net, 1024), 726350);
  EXPECT_EQ(net.variant, NetVariant::Ista);
}

TEST(Builders, SolverAndTrain) {
  auto cfg = parse("zstep.method = pgd\nzstep.linesearch = fixed\nzstep.eta = 0.25\ntikhonov.mode = nagd\n");
  const auto s = build_solver_config(cfg);
  EXPECT_EQ(s.method, ZStepMethod::Pgd);
  EXPECT_EQ(s.linesearch.mode, LinesearchMode::Fixed);
  EXPECT_EQ(s.linesearch.eta, 0.25);
  EXPECT_EQ(s.tikhonov, TikhonovMode::Nagd);
  cfg.set("tikhonov.mode", "cg");
  EXPECT_THROW(build_solver_config(cfg), ConfigError);
  cfg = parse("train.lr = -1\n");
  EXPECT_THROW(build_train_config(cfg), ConfigError);
  cfg = parse("reg.kind = zero\n");
  EXPECT_EQ(build_regularizer(cfg).kind, RegKind::Zero);
  cfg = parse("solver.cov_kind = full\nsolver.cov_value = 2\n");
  EXPECT_EQ(build_solver_covariance(cfg, 3).kind(), CovKind::Full);
}

TEST(RunConfig, SectionTextReflectsValues) {
  auto a = parse("sensing.kind = radon\n");
  auto b = parse("sensing.kind = radon\nsensing.angles = 16\n");
  EXPECT_NE(a.section_text("sensing"), b.section_text("sensing"));
  EXPECT_EQ(a.section_text("solver"), b.section_text("solver"));
}
