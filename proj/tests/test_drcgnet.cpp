#include <cginvert/drcgnet.hpp>
#include <cginvert/gcgls.hpp>
#include <cginvert/train.hpp>

#include <gtest/gtest.h>

#include <filesystem>

using namespace cginvert;

namespace {

NetConfig small_config(NetVariant variant, TikhonovMode mode, CovKind kind = CovKind::ScaledIdentity) {
  NetConfig cfg;
  cfg.K = 2;
  cfg.J = 2;
  cfg.channels = {3, 1};
  cfg.variant = variant;
  cfg.u_mode = mode;
  cfg.nagd_steps = 15;
  cfg.cov_kind = kind;
  cfg.cov_init = 0.5;
  cfg.gamma_max = 0.5;
  return cfg;
}

struct Toy {
  SensingModel a = build_gaussian(10, 16, 3);
  Vec c, y;
  Toy() {
    Rng rng(1);
    c = random_uniform(16, 0, 1, rng);
    y = a.apply(c);
  }
};

// Direct convolution loop: out[o](i, j) = sum_{c,a,b} w(a, b, c, o) in[c](i + a - p, j + b - p).
Vec conv_oracle(const Vec& in, const std::vector<double>& w, int k, int fin, int fout, int side) {
  Vec out = Vec::Zero(fout * side * side);
  const int p = (k - 1) / 2;
  for (int o = 0; o < fout; ++o)
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) {
        double s = 0;
        for (int c = 0; c < fin; ++c)
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
              const int ii = i + a - p, jj = j + b - p;
              if (ii < 0 || jj < 0 || ii >= side || jj >= side) continue;
              s += w[((a * k + b) * fin + c) * fout + o] * in[c * side * side + ii * side + jj];
            }
        out[o * side * side + i * side + j] = s;
      }
  return out;
}

}  // namespace

TEST(Conv, MatchesDirectLoop) {
  Rng rng(2);
  for (int k : {1, 3, 5}) {
    const ConvShape sh{k, 2, 3};
    const Vec in = random_normal(2 * 25, rng);
    std::vector<double> w(static_cast<std::size_t>(sh.size()));
    for (auto& v : w) v = std::normal_distribution<double>()(rng);
    const Vec out = conv2d_forward(in, w, sh, 5);
    EXPECT_LT((out - conv_oracle(in, w, k, 2, 3, 5)).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Conv, SingleUnitKernel) {
  Rng rng(3);
  const Vec x = random_normal(9, rng);
  const std::vector<double> w = {2.5};
  const Vec out = subnet_apply(x, w, subnet_shapes(1, {1}), 3);
  EXPECT_LT((out - 2.5 * x).norm(), 1e-15);
}

TEST(Conv, BackwardIsAdjoint) {
  Rng rng(4);
  const ConvShape sh{3, 2, 2};
  const Vec in = random_normal(2 * 16, rng), gout = random_normal(2 * 16, rng);
  std::vector<double> w(static_cast<std::size_t>(sh.size()));
  for (auto& v : w) v = std::normal_distribution<double>()(rng);
  std::vector<double> gw(w.size(), 0.0);
  const Vec gin = conv2d_backward(in, w, sh, 4, gout, gw);
  const Vec dx = random_normal(in.size(), rng);
  EXPECT_NEAR(conv2d_forward(dx, w, sh, 4).dot(gout), dx.dot(gin), 1e-12);
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto wp = w, wm = w;
    wp[i] += 1e-6;
    wm[i] -= 1e-6;
    const double fd = (conv2d_forward(in, wp, sh, 4).dot(gout) - conv2d_forward(in, wm, sh, 4).dot(gout)) / 2e-6;
    EXPECT_NEAR(gw[i], fd, 1e-7);
  }
}

TEST(Subnet, ZeroKernels) {
  Toy t;
  auto cfg = small_config(NetVariant::Ista, TikhonovMode::Exact);
  cfg.refine = false;
  const ParamLayout lay(cfg, 16);
  const std::vector<double> zeros(static_cast<std::size_t>(lay.subnet_size), 0.0);
  Rng rng(5);
  const Vec x = random_normal(16, rng);
  EXPECT_EQ(subnet_apply(x, zeros, lay.shapes, 4).norm(), 0.0);
  // gblock with delta = 0: ISTA gives ReLU(x + 0), PGD gives ReLU(x + W(x)) = ReLU(x)
  for (auto variant : {NetVariant::Ista, NetVariant::Pgd}) {
    cfg.variant = variant;
    GBlockTape tape;
    const Vec u = random_normal(16, rng);
    const Vec out = detail::gblock_forward(x, &u, t.a, t.y, 0.0, zeros, lay.shapes, cfg, tape);
    EXPECT_EQ(out, x.cwiseMax(0.0));
  }
}

TEST(GBlock, StepNormalization) {
  Toy t;
  auto cfg = small_config(NetVariant::Ista, TikhonovMode::Exact);
  const ParamLayout lay(cfg, 16);
  const std::vector<double> zeros(static_cast<std::size_t>(lay.subnet_size), 0.0);
  Rng rng(6);
  const Vec z = random_uniform(16, 0.5, 1, rng), u = random_normal(16, rng);
  const Vec grad = u.cwiseProduct(t.a.adjoint(t.a.apply(u.cwiseProduct(z)) - t.y));
  const double gn = grad.norm();
  GBlockTape tape;
  cfg.gamma_max = 2.0 * gn;
  detail::gblock_forward(z, &u, t.a, t.y, 0.3, zeros, lay.shapes, cfg, tape);
  EXPECT_EQ(tape.eta, 0.3);
  cfg.gamma_max = 0.5 * gn;
  detail::gblock_forward(z, &u, t.a, t.y, 0.3, zeros, lay.shapes, cfg, tape);
  EXPECT_NEAR(tape.eta, 0.15, 1e-15);
  EXPECT_NEAR(tape.gnorm, gn, 1e-12 * gn);
}

TEST(ParamCount, ReferenceNetwork) {
  NetConfig cfg;  // (K, J) = (3, 4), D = 8, f = (32 x 7, 1), k = 3, scaled identity
  EXPECT_EQ(param_count(cfg, 1024), 726350);
  EXPECT_EQ(subnet_param_count(cfg), 55872);
}

TEST(ParamCount, HandCount) {
  NetConfig cfg;
  cfg.K = 1;
  cfg.J = 1;
  cfg.kernel = 1;
  cfg.channels = {1};
  EXPECT_EQ(param_count(cfg, 16), 5);
  cfg.K = 0;
  EXPECT_THROW(param_count(cfg, 16), ConfigError);
}

TEST(ParamCount, MatchesMaterializedParameters) {
  Rng rng(7);
  std::uniform_int_distribution<int> small(1, 4), kern(0, 2), depth(1, 4), kinds(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    NetConfig cfg;
    cfg.K = small(rng);
    cfg.J = small(rng);
    cfg.kernel = 1 + 2 * kern(rng);
    cfg.channels.clear();
    const int d = depth(rng);
    for (int i = 0; i + 1 < d; ++i) cfg.channels.push_back(small(rng));
    cfg.channels.push_back(1);
    cfg.cov_kind = static_cast<CovKind>(kinds(rng));
    cfg.refine = trial % 2 == 0;
    const Index n = 9;
    const auto params = init_params(cfg, n, trial);
    // count by enumerating the groups independently of the layout arithmetic
    Index count = cov_param_count(cfg.cov_kind, n);
    const Index blocks = static_cast<Index>(cfg.K) * cfg.J + (cfg.refine ? 1 : 0);
    for (Index q = 0; q < blocks; ++q) {
      count += 1;
      int prev = 1;
      for (int f : cfg.channels) {
        count += static_cast<Index>(cfg.kernel) * cfg.kernel * prev * f;
        prev = f;
      }
    }
    EXPECT_EQ(params.values.size(), count);
    EXPECT_EQ(param_count(cfg, n), count);
  }
}

TEST(Forward, NeutralNetworkFreezesScale) {
  Toy t;
  auto cfg = small_config(NetVariant::Ista, TikhonovMode::Exact);
  cfg.refine = false;
  auto params = init_params(cfg, 16, 1);
  const ParamLayout lay(cfg, 16);
  params.values.tail(params.values.size() - lay.cov_size).setZero();
  const Vec out = forward(t.y, t.a, params, cfg);
  const Vec z0 = initial_scale(t.a, t.y, cfg.b);
  const auto p = CovarianceParam::initial(cfg.cov_kind, 16, cfg.cov_init, cfg.cov_eps);
  EXPECT_LT((out - z0.cwiseProduct(tikhonov_solve(z0, t.a, t.y, p))).norm(), 1e-12);
}

TEST(Forward, NeutralRefinementOnNonnegativeSignal) {
  Toy t;
  auto cfg = small_config(NetVariant::Ista, TikhonovMode::Exact);
  auto params = init_params(cfg, 16, 2);
  const ParamLayout lay(cfg, 16);
  const Index q = lay.blocks - 1;
  params.values.segment(lay.block_offset(q), lay.subnet_size + 1).setZero();
  NetTape tape;
  const Vec out = forward(t.y, t.a, params, cfg, &tape);
  EXPECT_EQ(out, tape.c.cwiseMax(0.0));
  if (tape.c.minCoeff() >= 0.0) {
    EXPECT_EQ(out, tape.c);
  }
}

TEST(Forward, TapeBookkeeping) {
  const auto a = build_radon(32, 15);
  NetConfig cfg;
  cfg.channels = {2, 1};
  Rng rng(3);
  const Vec y = a.apply(random_uniform(1024, 0, 1, rng));
  const auto params = init_params(cfg, 1024, 3);
  NetTape tape;
  forward(y, a, params, cfg, &tape);
  EXPECT_EQ(tape.z_states.size(), 12u);
  EXPECT_EQ(tape.ublocks.size(), 4u);
  EXPECT_EQ(tape.gblocks.size(), 13u);
  for (const auto& z : tape.z_states) EXPECT_GE(z.minCoeff(), 0.0);
  EXPECT_GE(tape.output.minCoeff(), 0.0);
}

TEST(Forward, RejectsNonSquareSignal) {
  const auto a = build_gaussian(4, 12, 1);
  NetConfig cfg = small_config(NetVariant::Ista, TikhonovMode::Exact);
  EXPECT_THROW(forward(Vec::Zero(4), a, init_params(cfg, 12, 1), cfg), ConfigError);
}

TEST(Backward, MatchesFiniteDifferencesEverywhere) {
  Toy t;
  for (auto variant : {NetVariant::Pgd, NetVariant::Ista})
    for (auto mode : {TikhonovMode::Exact, TikhonovMode::Nagd})
      for (auto kind : {CovKind::ScaledIdentity, CovKind::Diagonal, CovKind::Tridiagonal, CovKind::Full}) {
        auto cfg = small_config(variant, mode, kind);
        resolve_u_eta(cfg, t.a);
        auto params = init_params(cfg, 16, 5);
        Rng rng(7);
        params.values += 0.05 * random_normal(params.values.size(), rng);
        const Vec w = random_normal(16, rng);
        NetTape tape;
        forward(t.y, t.a, params, cfg, &tape);
        const Vec g = backward(tape, w, t.a, params, cfg);
        for (Index i = 0; i < g.size(); ++i) {
          const double h = 1e-5;
          NetParams pp = params, pm = params;
          pp.values[i] += h;
          pm.values[i] -= h;
          const double fd = (w.dot(forward(t.y, t.a, pp, cfg)) - w.dot(forward(t.y, t.a, pm, cfg))) / (2 * h);
          const double scale = std::max(std::abs(fd), std::abs(g[i]));
          EXPECT_LE(std::abs(fd - g[i]), 1e-4 * scale + 1e-8)
              << to_string(variant) << " " << to_string(kind) << " param " << i;
        }
      }
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
  Toy t;
  auto cfg = small_config(NetVariant::Pgd, TikhonovMode::Exact, CovKind::Full);
  const auto params = init_params(cfg, 16, 1);
  NetTape tape;
  forward(t.y, t.a, params, cfg, &tape);
  EXPECT_EQ(backward(tape, Vec::Zero(16), t.a, params, cfg).norm(), 0.0);
}

TEST(Backward, DeltaGradientWithInactiveClamp) {
  Toy t;
  auto cfg = small_config(NetVariant::Ista, TikhonovMode::Exact);
  cfg.gamma_max = 1e6;
  const auto params = init_params(cfg, 16, 9);
  const ParamLayout lay(cfg, 16);
  Rng rng(9);
  const Vec w = random_normal(16, rng);
  NetTape tape;
  forward(t.y, t.a, params, cfg, &tape);
  for (const auto& gb : tape.gblocks) EXPECT_EQ(gb.scale, 1.0);
  const Vec g = backward(tape, w, t.a, params, cfg);
  for (Index q = 0; q < lay.blocks; ++q) {
    const Index i = lay.delta_index(q);
    NetParams pp = params, pm = params;
    pp.values[i] += 1e-6;
    pm.values[i] -= 1e-6;
    const double fd = (w.dot(forward(t.y, t.a, pp, cfg)) - w.dot(forward(t.y, t.a, pm, cfg))) / 2e-6;
    EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Backward, TapeMismatch) {
  Toy t;
  auto cfg = small_config(NetVariant::Ista, TikhonovMode::Exact);
  const auto params = init_params(cfg, 16, 1);
  NetTape tape;
  forward(t.y, t.a, params, cfg, &tape);
  auto other = cfg;
  other.K = 3;
  EXPECT_THROW(backward(tape, Vec::Ones(16), t.a, init_params(other, 16, 1), other), DataError);
}

TEST(Unrolled, EqualsIterativeSolverBitForBit) {
  for (auto mode : {TikhonovMode::Exact, TikhonovMode::Nagd})
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto a = build_radon(4, 4);
      Rng rng(seed);
      const Vec y = a.apply(random_uniform(16, 0, 1, rng));
      NetConfig cfg;
      cfg.K = 3;
      cfg.J = 2;
      cfg.channels = {2, 1};
      cfg.refine = false;
      cfg.gamma_max = 1e300;
      cfg.cov_init = 0.7;
      cfg.u_mode = mode;
      cfg.nagd_steps = 20;
      resolve_u_eta(cfg, a);
      const double eta = 0.01;
      auto params = init_params(cfg, 16, seed);
      const ParamLayout lay(cfg, 16);
      for (Index q = 0; q < lay.blocks; ++q) {
        params.values[lay.delta_index(q)] = eta;
        params.values.segment(lay.kernel_offset(q), lay.subnet_size).setZero();
      }
      SolverConfig sc;
      sc.K = cfg.K;
      sc.J = cfg.J;
      sc.method = ZStepMethod::Ista;
      sc.linesearch.mode = LinesearchMode::Fixed;
      sc.linesearch.eta = eta;
      sc.tikhonov = mode;
      sc.nagd.steps = cfg.nagd_steps;
      sc.nagd.eta = cfg.u_eta;
      sc.monotone_guard = false;
      const auto p = CovarianceParam::initial(cfg.cov_kind, 16, cfg.cov_init, cfg.cov_eps);
      const auto rep = solve(a, y, p, ScaleRegularizer::zero(), sc);
      EXPECT_TRUE(forward(y, a, params, cfg) == rep.c_star);
    }
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  Toy t;
  auto cfg = small_config(NetVariant::Ista, TikhonovMode::Exact);
  const auto init = init_params(cfg, 16, 4);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.epochs = 3;
  const std::vector<Sample> data = {{t.y, t.c}};
  const auto res = train(data, t.a, cfg, tc, init);
  EXPECT_EQ(res.params.values, init.values);
  ASSERT_EQ(res.history.size(), 4u);
  for (const auto& h : res.history) EXPECT_EQ(h.train_mae, res.history[0].train_mae);
}

TEST(Train, DeterministicHistoryAndDescent) {
  Toy t;
  auto cfg = small_config(NetVariant::Ista, TikhonovMode::Exact);
  const auto init = init_params(cfg, 16, 4);
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.epochs = 30;
  const std::vector<Sample> data = {{t.y, t.c}};
  const auto a = train(data, t.a, cfg, tc, init);
  const auto b = train(data, t.a, cfg, tc, init);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].train_mae, b.history[i].train_mae);
  EXPECT_EQ(a.params.values, b.params.values);
  EXPECT_LT(a.history.back().train_mae, a.history.front().train_mae);
}

TEST(Train, AdamFirstStepMovesByLearningRate) {
  Adam adam(3, 1e-4, 0.9, 0.999, 1e-8);
  Vec p = Vec::Zero(3);
  adam.step(p, (Vec(3) << 2.0, -0.5, 0.0).finished());
  EXPECT_NEAR(p[0], -1e-4, 1e-10);
  EXPECT_NEAR(p[1], 1e-4, 1e-10);
  EXPECT_EQ(p[2], 0.0);
}

TEST(Checkpoint, RoundTrip) {
  Toy t;
  auto cfg = small_config(NetVariant::Pgd, TikhonovMode::Nagd, CovKind::Tridiagonal);
  resolve_u_eta(cfg, t.a);
  Checkpoint ck;
  ck.config = cfg;
  ck.params = init_params(cfg, 16, 11);
  ck.n = 16;
  ck.epoch = 7;
  ck.seed = 11;
  ck.model_fingerprint = "abc";
  ck.history = {{0, 0.5, 0.6}, {1, 0.25, kInf}};
  const auto dir = std::filesystem::temp_directory_path() / "cginvert_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, ck);
  const auto back = load_checkpoint(dir);
  EXPECT_EQ(back.params.values, ck.params.values);
  EXPECT_EQ(back.config.signature(), cfg.signature());
  EXPECT_EQ(back.config.u_eta, cfg.u_eta);
  EXPECT_EQ(back.epoch, 7);
  EXPECT_EQ(back.model_fingerprint, "abc");
  ASSERT_EQ(back.history.size(), 2u);
  EXPECT_EQ(back.history[1].train_mae, 0.25);
  std::filesystem::remove_all(dir);
}
