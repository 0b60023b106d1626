// cginvert command-line tool: dataset generation, iterative solves, network
// training and evaluation, solver diagnostics.

#include <cginvert/cginvert.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace cginvert;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool timing = false;
};

RunConfig load_config(const GlobalOptions& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : RunConfig::load(g.config_path);
  std::optional<std::uint64_t> seed = g.seed;
  if (!seed) {
    if (const char* env = std::getenv("CG_INVERT_SEED"); env && *env) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (*end != '\0' || env[0] == '-') throw ConfigError(std::string("CG_INVERT_SEED is not a seed: '") + env + "'");
      seed = v;
    }
  }
  if (seed) {
    const std::string s = std::to_string(*seed);
    for (const char* key : {"data.seed", "train.seed", "net.init_seed", "sensing.seed"}) cfg.set(key, s);
  }
  cfg.apply_overrides(g.overrides);
  return cfg;
}

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Runs body(i) for i in [0, n) on up to `jobs` threads. The first exception
// (lowest index) is rethrown after all workers finish.
template <class F>
void parallel_for(std::size_t n, int jobs, F body) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int t = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (t == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < t; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os << text;
  }
  fs::rename(tmp, path);
}

void check_fingerprint(const Dataset& ds, const SensingModel& model) {
  const std::string fp = model_fingerprint(model);
  if (ds.model_fingerprint != fp)
    throw DataError("dataset fingerprint mismatch: dataset was generated for '" + ds.model_description + "' (" +
                    ds.model_fingerprint + "), config describes '" + model.description() + "' (" + fp + ")");
}

ImageSource image_source(const RunConfig& cfg) {
  ImageSource src;
  const std::string path = cfg.has("data.images") ? cfg.str("data.images") : "";
  if (path.empty()) return src;
  src.label = path;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().extension() == ".pgm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) src.images.push_back(read_pgm(f).pixels);
  } else {
    src.images = read_csv_images(fs::path(path), cfg.real("data.csv_max"));
  }
  if (src.images.empty()) throw DataError("no images found in " + path);
  return src;
}

Vec image_of(const SensingModel& model, const Vec& c) { return model.synthesize(c); }

void dump_image(const fs::path& dir, const std::string& stem, const Vec& s, int side) {
  write_f64_le(dir / (stem + ".f64"), s);
  if (side > 0) write_pgm(dir / (stem + ".pgm"), s, side, side);
}

int cmd_gen_data(const GlobalOptions& g, const std::string& out) {
  const RunConfig cfg = load_config(g);
  const SensingModel model = build_sensing(cfg);
  const long long n = cfg.integer("data.n_samples");
  if (n < 0) throw ConfigError("data.n_samples must be >= 0");
  const Dataset ds = gen_dataset(image_source(cfg), model, cfg.real("data.snr_db"), static_cast<std::size_t>(n),
                                 cfg.seed("data.seed"));
  save_dataset(out, ds);
  std::cout << "dataset " << out << " samples=" << ds.pairs.size() << " m=" << ds.m << " n=" << ds.n
            << " fingerprint=" << ds.fingerprint << '\n';
  return 0;
}

struct SolveRow {
  double psnr = 0, ssim = 0, cost = 0, stat_u = 0, stat_z = 0, seconds = 0;
  int iters = 0;
};

int cmd_solve(const GlobalOptions& g, const std::string& data_dir, const std::string& out) {
  const RunConfig cfg = load_config(g);
  const SensingModel model = build_sensing(cfg);
  const Dataset ds = load_dataset(data_dir);
  check_fingerprint(ds, model);
  const ScaleRegularizer reg = build_regularizer(cfg);
  const SolverConfig scfg = build_solver_config(cfg);
  const CovarianceParam p = build_solver_covariance(cfg, model.cols());
  fs::create_directories(out);

  std::vector<SolveRow> rows(ds.pairs.size());
  parallel_for(ds.pairs.size(), g.jobs, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    const SolveReport rep = solve(model, ds.pairs[i].y, p, reg, scfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const Vec s_hat = image_of(model, rep.c_star), s = image_of(model, ds.pairs[i].c);
    SolveRow& r = rows[i];
    r.psnr = psnr(s_hat, s);
    r.ssim = model.side() > 0 ? ssim(s_hat, s, model.side(), model.side()) : std::numeric_limits<double>::quiet_NaN();
    r.cost = rep.state.trace.back().cost;
    r.stat_u = rep.stationarity_u;
    r.stat_z = rep.stationarity_z.absolute;
    r.iters = rep.iterations;
    r.seconds = g.timing ? secs : 0.0;
    const std::string id = std::to_string(i);
    dump_image(out, "recon_" + id, s_hat, model.side());
    std::ostringstream tr;
    write_trace_csv(tr, rep.state);
    write_text_atomic(fs::path(out) / ("trace_" + id + ".csv"), tr.str());
  });

  std::ostringstream csv;
  csv << "id,psnr,ssim,F_final,stationarity_u,stationarity_z,iters,seconds\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    csv << i << ',' << num(r.psnr) << ',' << num(r.ssim) << ',' << num(r.cost) << ',' << num(r.stat_u) << ','
        << num(r.stat_z) << ',' << r.iters << ',' << num(r.seconds) << '\n';
  }
  write_text_atomic(fs::path(out) / "metrics.csv", csv.str());
  std::cout << "solved " << rows.size() << " samples into " << out << '\n';
  return 0;
}

NetConfig net_config_for(const RunConfig& cfg, const SensingModel& model) {
  NetConfig net = build_net_config(cfg);
  resolve_u_eta(net, model);
  return net;
}

int cmd_param_count(const GlobalOptions& g) {
  const RunConfig cfg = load_config(g);
  const long long side = cfg.integer("sensing.side");
  if (side < 1) throw ConfigError("sensing.side must be >= 1");
  std::cout << param_count(build_net_config(cfg), static_cast<Index>(side) * side) << '\n';
  return 0;
}

int cmd_train(const GlobalOptions& g, const std::string& data_dir, const std::string& val_dir,
              const std::string& out) {
  const RunConfig cfg = load_config(g);
  const SensingModel model = build_sensing(cfg);
  const Dataset ds = load_dataset(data_dir);
  check_fingerprint(ds, model);
  std::optional<Dataset> val;
  if (!val_dir.empty()) {
    val = load_dataset(val_dir);
    check_fingerprint(*val, model);
  }
  const NetConfig net = net_config_for(cfg, model);
  const TrainConfig tcfg = build_train_config(cfg);
  const std::uint64_t init_seed = cfg.seed("net.init_seed");
  const auto res = train(ds.pairs, model, net, tcfg, init_params(net, model.cols(), init_seed),
                         val ? &val->pairs : nullptr);

  Checkpoint ck;
  ck.config = net;
  ck.params = res.params;
  ck.n = model.cols();
  ck.epoch = res.best_epoch;
  ck.seed = tcfg.seed;
  ck.model_fingerprint = model_fingerprint(model);
  ck.history = res.history;
  save_checkpoint(out, ck);
  std::ostringstream csv;
  csv << "epoch,train_mae,val_mae\n";
  for (const auto& h : res.history) csv << h.epoch << ',' << num(h.train_mae) << ',' << num(h.val_mae) << '\n';
  write_text_atomic(fs::path(out) / "losses.csv", csv.str());
  std::cout << "trained " << res.history.size() - 1 << " epochs, final train_mae " << num(res.history.back().train_mae)
            << (res.stopped_early ? " (stopped early)" : "") << ", checkpoint " << out << '\n';
  return 0;
}

int cmd_eval(const GlobalOptions& g, const std::string& data_dir, const std::string& ckpt_dir, const std::string& out) {
  const RunConfig cfg = load_config(g);
  const SensingModel model = build_sensing(cfg);
  const Dataset ds = load_dataset(data_dir);
  check_fingerprint(ds, model);
  const Checkpoint ck = load_checkpoint(ckpt_dir);
  if (ck.model_fingerprint != model_fingerprint(model))
    throw DataError("checkpoint was trained for a different sensing model (" + ck.model_fingerprint + ")");
  if (ck.n != model.cols()) throw DataError("checkpoint signal size does not match the sensing model");
  const NetConfig want = build_net_config(cfg);
  if (want.signature() != ck.config.signature())
    throw ConfigError("checkpoint/config mismatch: checkpoint has [" + ck.config.signature() + "], config has [" +
                      want.signature() + "]");
  const NetConfig& net = ck.config;
  fs::create_directories(out);

  struct Row {
    double psnr = 0, ssim = 0, mae = 0, seconds = 0;
  };
  std::vector<Row> rows(ds.pairs.size());
  parallel_for(ds.pairs.size(), g.jobs, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Vec c_hat = forward(ds.pairs[i].y, model, ck.params, net);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const Vec s_hat = image_of(model, c_hat), s = image_of(model, ds.pairs[i].c);
    rows[i] = {psnr(s_hat, s), model.side() > 0 ? ssim(s_hat, s, model.side(), model.side()) : 0.0,
               mae(c_hat, ds.pairs[i].c), g.timing ? secs : 0.0};
    dump_image(out, "recon_" + std::to_string(i), s_hat, model.side());
  });

  std::ostringstream csv;
  csv << "id,psnr,ssim,mae,seconds\n";
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv << i << ',' << num(rows[i].psnr) << ',' << num(rows[i].ssim) << ',' << num(rows[i].mae) << ','
        << num(rows[i].seconds) << '\n';
    total += rows[i].mae;
  }
  write_text_atomic(fs::path(out) / "metrics.csv", csv.str());
  std::cout << "mae " << num(rows.empty() ? 0.0 : total / static_cast<double>(rows.size())) << '\n';
  return 0;
}

int cmd_diagnose(const GlobalOptions& g, const std::string& data_dir, int sample) {
  const RunConfig cfg = load_config(g);
  const SensingModel model = build_sensing(cfg);
  const Dataset ds = load_dataset(data_dir);
  check_fingerprint(ds, model);
  const ScaleRegularizer reg = build_regularizer(cfg);
  const SolverConfig scfg = build_solver_config(cfg);
  const CovarianceParam p = build_solver_covariance(cfg, model.cols());
  std::cout << "id,monotone,max_increase,min_margin,telescoping,tail_spread,F_final,grad_u,z_residual\n";
  bool ok = true;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    if (sample >= 0 && static_cast<std::size_t>(sample) != i) continue;
    const auto d = diagnostics(solve(model, ds.pairs[i].y, p, reg, scfg));
    ok = ok && d.monotone && d.telescoping_holds;
    std::cout << i << ',' << (d.monotone ? "yes" : "no") << ',' << num(d.max_increase) << ',' << num(d.min_margin)
              << ',' << (d.telescoping_holds ? "holds" : "violated") << ',' << num(d.tail_spread) << ','
              << num(d.final_cost) << ',' << num(d.grad_u_norm) << ',' << num(d.z_residual.absolute) << '\n';
  }
  if (sample >= 0 && static_cast<std::size_t>(sample) >= ds.pairs.size())
    throw DataError("sample " + std::to_string(sample) + " out of range");
  if (!ok) throw NumericalError("descent diagnostics failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cginvert: compound Gaussian least squares and its unrolled network"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("-c,--config", g.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("-s,--set", g.overrides, "override a config key (key=value), repeatable");
  app.add_option("--seed", g.seed, "seed for data, training and network init (falls back to CG_INVERT_SEED)");
  app.add_option("-j,--jobs", g.jobs, "worker threads for solve and eval")->check(CLI::PositiveNumber);
  app.add_flag("--timing", g.timing, "record wall-clock seconds in metrics.csv (otherwise 0)");
  app.fallthrough();

  std::string data, out, val, ckpt;
  int sample = -1;
  bool count_only = false;

  auto* gen = app.add_subcommand("gen-data", "generate a dataset");
  gen->add_option("-o,--out", out, "dataset directory")->required();

  auto* solve_cmd = app.add_subcommand("solve", "run the iterative solver over a dataset");
  solve_cmd->add_option("-d,--data", data, "dataset directory")->required();
  solve_cmd->add_option("-o,--out", out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train the unrolled network");
  train_cmd->add_flag("--param-count", count_only, "print the parameter count and exit");
  auto* train_data = train_cmd->add_option("-d,--data", data, "training dataset directory");
  train_cmd->add_option("--val", val, "validation dataset directory");
  auto* train_out = train_cmd->add_option("-o,--out", out, "checkpoint directory");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("-d,--data", data, "dataset directory")->required();
  eval_cmd->add_option("-k,--checkpoint", ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("-o,--out", out, "output directory")->required();

  auto* diag = app.add_subcommand("diagnose", "check descent properties of the solver on a dataset");
  diag->add_option("-d,--data", data, "dataset directory")->required();
  diag->add_option("--sample", sample, "only this sample id");

  auto* pc = app.add_subcommand("param-count", "print the network parameter count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(g, out);
    if (solve_cmd->parsed()) return cmd_solve(g, data, out);
    if (pc->parsed() || (train_cmd->parsed() && count_only)) return cmd_param_count(g);
    if (train_cmd->parsed()) {
      if (train_data->count() == 0 || train_out->count() == 0)
        throw ConfigError("train needs --data and --out (or --param-count)");
      return cmd_train(g, data, val, out);
    }
    if (eval_cmd->parsed()) return cmd_eval(g, data, ckpt, out);
    if (diag->parsed()) return cmd_diagnose(g, data, sample);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
