#pragma once

// Adam training of the unrolled network on the MAE loss, and checkpoint I/O
// (JSON manifest + little-endian float64 blob).

#include "common.hpp"
#include "drcgnet.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <vector>

namespace cginvert {

struct Sample {
  Vec y;
  Vec c;
};

struct TrainConfig {
  double lr = 1e-4;
  int epochs = 2000;
  int batch = 0;  // 0 = full batch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::uint64_t seed = 0;
  int patience = 0;  // early stopping on validation MAE; 0 disables

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("train.lr must be nonnegative");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (batch < 0) throw ConfigError("train.batch must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps_adam > 0.0)) throw ConfigError("train.eps must be positive");
    if (patience < 0) throw ConfigError("train.patience must be >= 0");
  }
};

class Adam {
public:
  Adam(Index size, double lr, double beta1, double beta2, double eps)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(Vec::Zero(size)), v_(Vec::Zero(size)) {}

  void step(Vec& params, const Vec& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (Index i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      const double mh = m_[i] / c1, vh = v_[i] / c2;
      params[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }

private:
  double lr_, b1_, b2_, eps_;
  Vec m_, v_;
  int t_ = 0;
};

/// Mean over samples of (1/n) ||c_hat - c||_1, accumulated in sample order.
inline double dataset_mae(const std::vector<Sample>& data, const SensingModel& model, const NetParams& params,
                          const NetConfig& cfg) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : data) total += mae(forward(s.y, model, params, cfg), s.c);
  return total / static_cast<double>(data.size());
}

/// Gradient of the batch MAE (1/|B|)(1/n) sum ||c_hat - c||_1; returns the batch loss.
inline double batch_gradient(const std::vector<Sample>& data, std::span<const std::size_t> idx,
                             const SensingModel& model, const NetParams& params, const NetConfig& cfg, Vec& grad) {
  grad.setZero(params.values.size());
  double loss = 0.0;
  const double scale = 1.0 / (static_cast<double>(idx.size()) * static_cast<double>(model.cols()));
  for (std::size_t i : idx) {
    NetTape tape;
    const Vec out = forward(data[i].y, model, params, cfg, &tape);
    const Vec diff = out - data[i].c;
    loss += diff.cwiseAbs().sum() * scale;
    const Vec g = diff.unaryExpr([scale](double d) { return d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0); });
    grad += backward(tape, g, model, params, cfg);
  }
  return loss;
}

struct EpochRecord {
  int epoch = 0;
  double train_mae = 0.0;
  double val_mae = 0.0;  // NaN when no validation set
};

struct TrainResult {
  NetParams params;
  std::vector<EpochRecord> history;  // epoch 0 is the untrained network
  int best_epoch = 0;
  bool stopped_early = false;
};

/// Minimizes the MAE with Adam. History records the MAE of the full training
/// (and validation) set after each epoch's updates.
inline TrainResult train(const std::vector<Sample>& data, const SensingModel& model, const NetConfig& cfg,
                         const TrainConfig& tcfg, NetParams init, const std::vector<Sample>* validation = nullptr) {
  cfg.validate();
  tcfg.validate();
  if (data.empty()) throw DataError("training set is empty");
  for (const auto& s : data) {
    require_size(s.y.size(), model.rows(), "training sample y");
    require_size(s.c.size(), model.cols(), "training sample c");
  }
  const bool use_val = validation && !validation->empty();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  TrainResult res;
  res.params = std::move(init);
  NetParams best = res.params;
  double best_val = kInf;
  int since_best = 0;

  auto record = [&](int epoch) {
    EpochRecord r{epoch, dataset_mae(data, model, res.params, cfg), use_val ? dataset_mae(*validation, model, res.params, cfg) : nan};
    if (!std::isfinite(r.train_mae)) {
      throw NumericalError("training loss became non-finite at epoch " + std::to_string(epoch) +
                           " (parameter norm " + std::to_string(res.params.values.norm()) + ", max |param| " +
                           std::to_string(res.params.values.cwiseAbs().maxCoeff()) + ")");
    }
    res.history.push_back(r);
    return r;
  };

  EpochRecord r0 = record(0);
  if (use_val) {
    best_val = r0.val_mae;
    best = res.params;
  }

  Adam opt(res.params.values.size(), tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps_adam);
  Rng rng(tcfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = tcfg.batch > 0 ? static_cast<std::size_t>(tcfg.batch) : data.size();
  Vec grad;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      batch_gradient(data, std::span<const std::size_t>(order.data() + start, len), model, res.params, cfg, grad);
      if (!grad.allFinite()) throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch));
      opt.step(res.params.values, grad);
    }
    const EpochRecord r = record(epoch);
    if (use_val) {
      if (r.val_mae < best_val) {
        best_val = r.val_mae;
        best = res.params;
        res.best_epoch = epoch;
        since_best = 0;
      } else if (tcfg.patience > 0 && ++since_best >= tcfg.patience) {
        res.stopped_early = true;
        break;
      }
    } else {
      res.best_epoch = epoch;
    }
  }
  if (use_val) res.params = std::move(best);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline nlohmann::json net_config_to_json(const NetConfig& c) {
  return {{"K", c.K},
          {"J", c.J},
          {"kernel", c.kernel},
          {"channels", c.channels},
          {"variant", to_string(c.variant)},
          {"cov_kind", to_string(c.cov_kind)},
          {"cov_init", c.cov_init},
          {"cov_eps", c.cov_eps},
          {"gamma_max", c.gamma_max},
          {"b", c.b},
          {"u_mode", c.u_mode == TikhonovMode::Exact ? "exact" : "nagd"},
          {"nagd_steps", c.nagd_steps},
          {"u_eta", c.u_eta},
          {"refine", c.refine}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  try {
    c.K = j.at("K");
    c.J = j.at("J");
    c.kernel = j.at("kernel");
    c.channels = j.at("channels").get<std::vector<int>>();
    c.variant = net_variant_from_string(j.at("variant"));
    c.cov_kind = cov_kind_from_string(j.at("cov_kind"));
    c.cov_init = j.at("cov_init");
    c.cov_eps = j.at("cov_eps");
    c.gamma_max = j.at("gamma_max");
    c.b = j.at("b");
    c.u_mode = j.at("u_mode").get<std::string>() == "nagd" ? TikhonovMode::Nagd : TikhonovMode::Exact;
    c.nagd_steps = j.at("nagd_steps");
    c.u_eta = j.at("u_eta");
    c.refine = j.at("refine");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint config: ") + e.what());
  }
  return c;
}

inline void write_f64_le(const std::filesystem::path& path, const Vec& v) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  for (Index i = 0; i < v.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(v[i]);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

inline Vec read_f64_le(const std::filesystem::path& path, std::optional<Index> expected = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() % 8 != 0) throw DataError(path.string() + ": size is not a multiple of 8 bytes");
  const Index n = static_cast<Index>(bytes.size() / 8);
  if (expected && *expected != n)
    throw DataError(path.string() + ": expected " + std::to_string(*expected) + " values, found " + std::to_string(n));
  Vec v(n);
  for (Index i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[static_cast<std::size_t>(8 * i + k)]) << (8 * k);
    v[i] = std::bit_cast<double>(bits);
  }
  return v;
}

struct Checkpoint {
  NetConfig config;
  NetParams params;
  Index n = 0;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string model_fingerprint;
  std::vector<EpochRecord> history;
};

/// Writes <dir>/checkpoint.json and <dir>/params.f64.
inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::filesystem::create_directories(dir);
  const ParamLayout lay(ck.config, ck.n);
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& h : ck.history)
    losses.push_back({{"epoch", h.epoch}, {"train_mae", h.train_mae},
                      {"val_mae", std::isfinite(h.val_mae) ? nlohmann::json(h.val_mae) : nlohmann::json(nullptr)}});
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& sh : lay.shapes) shapes.push_back({sh.kernel, sh.kernel, sh.in_channels, sh.out_channels});
  nlohmann::json m = {{"format", "cginvert-checkpoint"},
                      {"version", 1},
                      {"config", net_config_to_json(ck.config)},
                      {"n", ck.n},
                      {"param_count", lay.total()},
                      {"layout",
                       {{"order", "covariance, then per block: delta followed by kernels layer 1..D (HWIO)"},
                        {"covariance", lay.cov_size},
                        {"blocks", lay.blocks},
                        {"kernel_shapes", shapes}}},
                      {"seed", ck.seed},
                      {"epoch", ck.epoch},
                      {"model_fingerprint", ck.model_fingerprint},
                      {"losses", losses},
                      {"blob", "params.f64"},
                      {"dtype", "float64"},
                      {"byte_order", "little"}};
  std::ofstream os(dir / "checkpoint.json");
  if (!os) throw DataError("cannot write checkpoint manifest in " + dir.string());
  os << m.dump(2) << '\n';
  write_f64_le(dir / "params.f64", ck.params.values);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "checkpoint.json");
  if (!is) throw DataError("cannot open " + (dir / "checkpoint.json").string());
  nlohmann::json m;
  try {
    is >> m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (m.value("format", "") != "cginvert-checkpoint") throw DataError("not a cginvert checkpoint");
  Checkpoint ck;
  ck.config = net_config_from_json(m.at("config"));
  ck.n = m.at("n");
  ck.epoch = m.value("epoch", 0);
  ck.seed = m.value("seed", std::uint64_t{0});
  ck.model_fingerprint = m.value("model_fingerprint", "");
  for (const auto& h : m.value("losses", nlohmann::json::array()))
    ck.history.push_back({h.at("epoch"), h.at("train_mae"),
                          h.at("val_mae").is_null() ? std::numeric_limits<double>::quiet_NaN() : h.at("val_mae").get<double>()});
  const Index count = m.at("param_count");
  if (count != param_count(ck.config, ck.n)) throw DataError("checkpoint param_count disagrees with its config");
  ck.params.values = read_f64_le(dir / m.value("blob", "params.f64"), count);
  return ck;
}

}  // namespace cginvert
