#pragma once

// Unrolled G-CG-LS network: learned covariance, per-step data-fidelity step
// scalars with normalized gradient clamping, convolutional subnetworks standing
// in for grad R (PGD) or prox (ISTA), and an optional refinement step on
// c = z . u. Gradients are computed by an explicit reverse pass over a tape.

#include "common.hpp"
#include "conv.hpp"
#include "covariance.hpp"
#include "gcgls.hpp"
#include "sensing.hpp"
#include "tikhonov.hpp"

#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace cginvert {

enum class NetVariant { Pgd, Ista };

inline std::string to_string(NetVariant v) { return v == NetVariant::Pgd ? "pgd" : "ista"; }
inline NetVariant net_variant_from_string(const std::string& s) {
  if (s == "pgd") return NetVariant::Pgd;
  if (s == "ista") return NetVariant::Ista;
  throw ConfigError("unknown net.variant '" + s + "'");
}

struct NetConfig {
  int K = 3;
  int J = 4;
  int kernel = 3;
  std::vector<int> channels = {32, 32, 32, 32, 32, 32, 32, 1};  // f_1..f_D
  NetVariant variant = NetVariant::Ista;
  CovKind cov_kind = CovKind::ScaledIdentity;
  double cov_init = 0.1;
  double cov_eps = kDefaultCovEps;
  double gamma_max = 1.0;
  double b = 10.0;
  TikhonovMode u_mode = TikhonovMode::Exact;
  int nagd_steps = 100;
  double u_eta = 0.0;  // NAGD step; 0 is resolved once by resolve_u_eta and then frozen
  bool refine = true;

  int depth() const { return static_cast<int>(channels.size()); }

  void validate() const {
    if (K < 0 || J < 0 || K * J < 1) throw ConfigError("net.K * net.J must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("net.kernel must be a positive odd integer");
    if (channels.empty()) throw ConfigError("net.channels must list at least one layer");
    for (int f : channels)
      if (f < 1) throw ConfigError("net.channels entries must be positive");
    if (channels.back() != 1) throw ConfigError("net.channels must end with 1 (f_D = 1)");
    if (!(gamma_max > 0.0)) throw ConfigError("net.gamma_max must be positive");
    if (!(b > 0.0)) throw ConfigError("net.b must be positive");
    if (!(cov_eps > 0.0)) throw ConfigError("net.cov_eps must be positive");
    if (u_mode == TikhonovMode::Nagd && nagd_steps < 1) throw ConfigError("net.nagd_steps must be >= 1");
  }

  /// Canonical text used for checkpoint compatibility checks.
  std::string signature() const {
    std::ostringstream os;
    os.precision(17);
    os << "K=" << K << " J=" << J << " kernel=" << kernel << " channels=";
    for (std::size_t i = 0; i < channels.size(); ++i) os << (i ? "," : "") << channels[i];
    os << " variant=" << to_string(variant) << " cov=" << to_string(cov_kind) << " cov_eps=" << cov_eps
       << " gamma_max=" << gamma_max << " b=" << b << " u_mode=" << (u_mode == TikhonovMode::Exact ? "exact" : "nagd")
       << " nagd_steps=" << nagd_steps << " refine=" << (refine ? 1 : 0);
    return os.str();
  }
};

/// Scalars per subnetwork: p = sum_d f_{d-1} f_d k^2, f_0 = 1.
inline Index subnet_param_count(const NetConfig& cfg) {
  Index p = 0;
  for (const auto& sh : subnet_shapes(cfg.kernel, cfg.channels)) p += sh.size();
  return p;
}

inline Index unrolled_blocks(const NetConfig& cfg) { return static_cast<Index>(cfg.K) * cfg.J + (cfg.refine ? 1 : 0); }

/// dim(P) + (KJ + 1)(p + 1) with the refinement block, dim(P) + KJ (p + 1) without.
inline Index param_count(const NetConfig& cfg, Index n) {
  cfg.validate();
  return cov_param_count(cfg.cov_kind, n) + unrolled_blocks(cfg) * (subnet_param_count(cfg) + 1);
}

/// Offsets of each parameter group in the flat parameter vector:
/// [covariance | block 0: delta, kernels | block 1 | ... ], block KJ is the refinement.
struct ParamLayout {
  Index n = 0;
  Index cov_size = 0;
  Index subnet_size = 0;
  Index blocks = 0;
  std::vector<ConvShape> shapes;

  ParamLayout(const NetConfig& cfg, Index n_)
      : n(n_), cov_size(cov_param_count(cfg.cov_kind, n_)), subnet_size(subnet_param_count(cfg)),
        blocks(unrolled_blocks(cfg)), shapes(subnet_shapes(cfg.kernel, cfg.channels)) {}

  Index total() const { return cov_size + blocks * (subnet_size + 1); }
  Index block_offset(Index q) const { return cov_size + q * (subnet_size + 1); }
  Index delta_index(Index q) const { return block_offset(q); }
  Index kernel_offset(Index q) const { return block_offset(q) + 1; }
};

struct NetParams {
  Vec values;

  std::span<const double> cov(const ParamLayout& l) const { return {values.data(), static_cast<std::size_t>(l.cov_size)}; }
  double delta(const ParamLayout& l, Index q) const { return values[l.delta_index(q)]; }
  std::span<const double> kernels(const ParamLayout& l, Index q) const {
    return {values.data() + l.kernel_offset(q), static_cast<std::size_t>(l.subnet_size)};
  }
};

/// Glorot-uniform kernels, delta = 1, covariance = cov_init * I in the configured structure.
inline NetParams init_params(const NetConfig& cfg, Index n, std::uint64_t seed) {
  cfg.validate();
  ParamLayout lay(cfg, n);
  NetParams p;
  p.values = Vec::Zero(lay.total());
  p.values.head(lay.cov_size) = CovarianceParam::initial(cfg.cov_kind, n, cfg.cov_init, cfg.cov_eps).params();
  Rng rng(seed);
  for (Index q = 0; q < lay.blocks; ++q) {
    p.values[lay.delta_index(q)] = 1.0;
    Index off = lay.kernel_offset(q);
    for (const auto& sh : lay.shapes) {
      const double fan_in = static_cast<double>(sh.kernel) * sh.kernel * sh.in_channels;
      const double fan_out = static_cast<double>(sh.kernel) * sh.kernel * sh.out_channels;
      const double lim = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-lim, lim);
      for (Index i = 0; i < sh.size(); ++i) p.values[off + i] = dist(rng);
      off += sh.size();
    }
  }
  return p;
}

/// Fixes a NAGD step for the network when none is configured:
/// 1 / (||A||^2 b^2 + 1 / cov_init).
inline void resolve_u_eta(NetConfig& cfg, const SensingModel& model) {
  if (cfg.u_mode != TikhonovMode::Nagd || cfg.u_eta > 0.0) return;
  const double an = model.a_norm();
  cfg.u_eta = 1.0 / (an * an * cfg.b * cfg.b + 1.0 / cfg.cov_init);
}

// ---------------------------------------------------------------------------
// Forward pass.

struct GBlockTape {
  Vec z;        // input z
  Vec u;        // u used in A_u (empty for the refinement block: u = 1)
  Vec h;        // A^T (A (u . z) - y)
  Vec grad;     // u . h
  double gnorm = 0.0;
  double scale = 1.0;  // min(1, gamma_max / gnorm)
  double eta = 0.0;
  Vec r;        // z - eta grad
  Vec pre;      // argument of the outer ReLU
  SubnetTape subnet;
};

struct UBlockTape {
  Vec z;
  Vec u;                                   // output
  std::shared_ptr<TikhonovSystem> system;  // exact mode
  std::vector<Vec> iterates;               // NAGD mode: u^{(0)} .. u^{(J_u)}
  double eta = 0.0;
};

struct NetTape {
  Vec y;
  Vec z0;
  std::vector<UBlockTape> ublocks;  // U_0 .. U_K
  std::vector<GBlockTape> gblocks;  // K*J scale steps, then the refinement step if enabled
  std::vector<Vec> z_states;        // z after every intermediate map (K*J entries)
  Vec c;                            // U_K . Z_K
  Vec output;
};

namespace detail {

inline Vec ones_or(const Vec& u, Index n) { return u.size() ? u : Vec::Ones(n); }

inline Vec gblock_forward(const Vec& z, const Vec* u, const SensingModel& model, const Vec& y, double delta,
                          std::span<const double> kernels, const std::vector<ConvShape>& shapes, const NetConfig& cfg,
                          GBlockTape& t) {
  const int side = model.side();
  t.z = z;
  if (u) {
    t.u = *u;
    t.h = model.adjoint(model.apply(u->cwiseProduct(z)) - y);
    t.grad = u->cwiseProduct(t.h);
  } else {
    t.u.resize(0);
    t.h = model.adjoint(model.apply(z) - y);
    t.grad = t.h;
  }
  t.gnorm = t.grad.norm();
  t.scale = t.gnorm <= cfg.gamma_max ? 1.0 : cfg.gamma_max / t.gnorm;
  t.eta = delta * t.scale;
  t.r = gradient_step(z, t.grad, t.eta);
  if (cfg.variant == NetVariant::Pgd) {
    t.pre = t.r + subnet_apply(z, kernels, shapes, side, &t.subnet);
  } else {
    t.pre = t.r + subnet_apply(t.r, kernels, shapes, side, &t.subnet);
  }
  return t.pre.unaryExpr([](double v) { return relu(v); });
}

inline Vec ublock_forward(const Vec& z, const Vec& u_start, const SensingModel& model, const Vec& y,
                          const CovarianceParam& p, const NetConfig& cfg, UBlockTape& t) {
  t.z = z;
  if (cfg.u_mode == TikhonovMode::Exact) {
    t.system = std::make_shared<TikhonovSystem>(z, model, p);
    t.u = t.system->solution(y);
    return t.u;
  }
  if (!(cfg.u_eta > 0.0)) throw ConfigError("net.u_eta must be resolved before a NAGD forward pass");
  t.eta = cfg.u_eta;
  t.iterates.clear();
  t.iterates.push_back(u_start);
  Vec r_prev = r_u_step(u_start, z, model, y, p, t.eta);
  Vec u = u_start;
  for (int j = 1; j <= cfg.nagd_steps; ++j) {
    const Vec r_cur = j == 1 ? r_prev : r_u_step(u, z, model, y, p, t.eta);
    const double beta = nagd_momentum(j);
    u = r_cur + beta * (r_cur - r_prev);
    r_prev = r_cur;
    t.iterates.push_back(u);
  }
  t.u = u;
  return u;
}

}  // namespace detail

inline Vec forward(const Vec& y, const SensingModel& model, const NetParams& params, const NetConfig& cfg,
                   NetTape* tape_out = nullptr) {
  cfg.validate();
  require_size(y.size(), model.rows(), "drcgnet forward(y)");
  const Index n = model.cols();
  if (model.side() == 0 || static_cast<Index>(model.side()) * model.side() != n)
    throw ConfigError("network requires square images (n = side^2)");
  const ParamLayout lay(cfg, n);
  require_size(params.values.size(), lay.total(), "drcgnet params");
  const auto covs = params.cov(lay);
  const CovarianceParam p(cfg.cov_kind, n, Eigen::Map<const Vec>(covs.data(), lay.cov_size), cfg.cov_eps);

  NetTape local;
  NetTape& t = tape_out ? *tape_out : local;
  t = NetTape{};
  t.y = y;
  t.z0 = initial_scale(model, y, cfg.b);
  t.ublocks.resize(static_cast<std::size_t>(cfg.K) + 1);
  t.gblocks.resize(static_cast<std::size_t>(lay.blocks));

  Vec u = detail::ublock_forward(t.z0, Vec::Zero(n), model, y, p, cfg, t.ublocks[0]);
  Vec z = t.z0;
  Index q = 0;
  for (int k = 1; k <= cfg.K; ++k) {
    for (int j = 1; j <= cfg.J; ++j, ++q) {
      z = detail::gblock_forward(z, &u, model, y, params.delta(lay, q), params.kernels(lay, q), lay.shapes, cfg,
                                 t.gblocks[q]);
      t.z_states.push_back(z);
    }
    u = detail::ublock_forward(z, u, model, y, p, cfg, t.ublocks[k]);
  }
  t.c = z.cwiseProduct(u);
  if (cfg.refine) {
    t.output = detail::gblock_forward(t.c, nullptr, model, y, params.delta(lay, q), params.kernels(lay, q), lay.shapes,
                                      cfg, t.gblocks[q]);
  } else {
    t.output = t.c;
  }
  return t.output;
}

// ---------------------------------------------------------------------------
// Reverse pass.

namespace detail {

/// Returns dL/dz_in; accumulates dL/du into *gu (when the block uses u) and
/// dL/d(delta, kernels) into the block's gradient slice.
inline Vec gblock_backward(const GBlockTape& t, const Vec& gout, const SensingModel& model, double delta,
                           std::span<const double> kernels, const std::vector<ConvShape>& shapes, const NetConfig& cfg,
                           double& gdelta, std::span<double> gkernels, Vec* gu) {
  const int side = model.side();
  Vec gpre = gout;
  for (Index i = 0; i < gpre.size(); ++i)
    if (!(t.pre[i] > 0.0)) gpre[i] = 0.0;

  Vec gz, gr;
  if (cfg.variant == NetVariant::Pgd) {
    gr = gpre;
    gz = subnet_backward(t.subnet, kernels, shapes, side, gpre, gkernels);
  } else {
    gr = gpre + subnet_backward(t.subnet, kernels, shapes, side, gpre, gkernels);
    gz = Vec::Zero(gpre.size());
  }
  // r = z - eta * grad
  gz += gr;
  const double geta = -gr.dot(t.grad);
  Vec ggrad = -t.eta * gr;
  // eta = delta * scale(gnorm)
  gdelta += geta * t.scale;
  if (t.gnorm > cfg.gamma_max) {
    const double dscale = -cfg.gamma_max / (t.gnorm * t.gnorm);
    ggrad += (geta * delta * dscale / t.gnorm) * t.grad;
  }
  // grad = u . h, h = A^T (A (u . z) - y)
  Vec gh;
  if (t.u.size()) {
    if (gu) *gu += ggrad.cwiseProduct(t.h);
    gh = ggrad.cwiseProduct(t.u);
  } else {
    gh = ggrad;
  }
  const Vec gs = model.adjoint(model.apply(gh));
  if (t.u.size()) {
    if (gu) *gu += gs.cwiseProduct(t.z);
    gz += gs.cwiseProduct(t.u);
  } else {
    gz += gs;
  }
  return gz;
}

/// Returns dL/dz for the block input; accumulates dL/du_start into *gu_start
/// (NAGD warm start) and covariance gradients into gcov.
inline Vec ublock_backward(const UBlockTape& t, const Vec& gout, const SensingModel& model, const Vec& y,
                           const CovarianceParam& p, Eigen::Ref<Vec> gcov, Vec* gu_start) {
  const Vec& z = t.z;
  if (t.system) {
    const Vec& u = t.u;
    const Vec w = t.system->solve(gout);
    const Vec res = y - model.apply(z.cwiseProduct(u));
    Vec gz = w.cwiseProduct(model.adjoint(res)) - u.cwiseProduct(model.adjoint(model.apply(z.cwiseProduct(w))));
    p.accumulate_grad(p.solve(w), p.solve(u), 1.0, gcov);
    return gz;
  }
  const int steps = static_cast<int>(t.iterates.size()) - 1;
  const double eta = t.eta;
  std::vector<Vec> gu(t.iterates.size(), Vec::Zero(z.size()));
  std::vector<Vec> grr(t.iterates.size(), Vec::Zero(z.size()));  // dL/d r(u^{(j)})
  gu[static_cast<std::size_t>(steps)] = gout;
  Vec gz = Vec::Zero(z.size());
  auto backprop_r = [&](int j) {
    const Vec& rbar = grr[static_cast<std::size_t>(j)];
    const Vec& uj = t.iterates[static_cast<std::size_t>(j)];
    const Vec ar = model.adjoint(model.apply(z.cwiseProduct(rbar)));
    const Vec pr = p.solve(rbar);
    gu[static_cast<std::size_t>(j)] += rbar - eta * (z.cwiseProduct(ar) + pr);
    const Vec h = model.adjoint(model.apply(z.cwiseProduct(uj)) - y);
    gz -= eta * (rbar.cwiseProduct(h) + uj.cwiseProduct(ar));
    p.accumulate_grad(pr, p.solve(uj), eta, gcov);
  };
  for (int j = steps; j >= 1; --j) {
    const Vec& g = gu[static_cast<std::size_t>(j)];
    if (j == 1) {
      grr[0] += g;
    } else {
      const double beta = nagd_momentum(j);
      grr[static_cast<std::size_t>(j - 1)] += (1.0 + beta) * g;
      grr[static_cast<std::size_t>(j - 2)] -= beta * g;
    }
    // r(u^{(j-1)}) has received all its contributions (from steps j and j+1)
    backprop_r(j - 1);
  }
  if (gu_start) *gu_start += gu[0];
  return gz;
}

}  // namespace detail

/// dL/dparams given dL/doutput.
inline Vec backward(const NetTape& t, const Vec& grad_out, const SensingModel& model, const NetParams& params,
                    const NetConfig& cfg) {
  const Index n = model.cols();
  const ParamLayout lay(cfg, n);
  require_size(params.values.size(), lay.total(), "drcgnet backward(params)");
  require_size(grad_out.size(), n, "drcgnet backward(grad)");
  if (t.ublocks.size() != static_cast<std::size_t>(cfg.K) + 1 ||
      t.gblocks.size() != static_cast<std::size_t>(lay.blocks) || t.output.size() != n)
    throw DataError("tape does not match the network configuration");
  const auto covs = params.cov(lay);
  const CovarianceParam p(cfg.cov_kind, n, Eigen::Map<const Vec>(covs.data(), lay.cov_size), cfg.cov_eps);

  Vec grad = Vec::Zero(lay.total());
  auto gcov = grad.head(lay.cov_size);
  auto kslice = [&](Index q) { return std::span<double>(grad.data() + lay.kernel_offset(q), lay.subnet_size); };

  Vec gc = grad_out;
  if (cfg.refine) {
    const Index q = lay.blocks - 1;
    gc = detail::gblock_backward(t.gblocks[q], grad_out, model, params.delta(lay, q), params.kernels(lay, q),
                                 lay.shapes, cfg, grad[lay.delta_index(q)], kslice(q), nullptr);
  }
  const Vec& u_last = t.ublocks.back().u;
  const Vec& z_last = t.ublocks.back().z;
  Vec gu = gc.cwiseProduct(z_last);  // dL/dU_K
  Vec gz = gc.cwiseProduct(u_last);  // dL/dZ_K

  for (int k = cfg.K; k >= 1; --k) {
    Vec gu_prev = Vec::Zero(n);
    gz += detail::ublock_backward(t.ublocks[static_cast<std::size_t>(k)], gu, model, t.y, p, gcov,
                                  cfg.u_mode == TikhonovMode::Nagd ? &gu_prev : nullptr);
    for (int j = cfg.J; j >= 1; --j) {
      const Index q = static_cast<Index>(k - 1) * cfg.J + (j - 1);
      gz = detail::gblock_backward(t.gblocks[q], gz, model, params.delta(lay, q), params.kernels(lay, q), lay.shapes,
                                   cfg, grad[lay.delta_index(q)], kslice(q), &gu_prev);
    }
    gu = std::move(gu_prev);
  }
  // U_0 depends on the fixed z0 and on P only.
  detail::ublock_backward(t.ublocks[0], gu, model, t.y, p, gcov, nullptr);
  return grad;
}

/// (1/n) ||c_hat - c||_1
inline double mae(const Vec& c_hat, const Vec& c) { return (c_hat - c).cwiseAbs().sum() / static_cast<double>(c.size()); }

}  // namespace cginvert
