#pragma once

// Flat key=value run configuration. Lines are `section.key = value`; '#' starts
// a comment. Unknown keys are rejected. Builders turn a RunConfig into the
// library's config structs.

#include "common.hpp"
#include "covariance.hpp"
#include "drcgnet.hpp"
#include "gcgls.hpp"
#include "regularizer.hpp"
#include "scale_step.hpp"
#include "sensing.hpp"
#include "tikhonov.hpp"
#include "train.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cginvert {

/// Every accepted key; an empty default means "no default".
inline const std::map<std::string, std::string>& config_schema() {
  static const std::map<std::string, std::string> schema = {
      {"sensing.kind", ""},            // radon | gaussian
      {"sensing.side", ""},            // image side; n = side^2
      {"sensing.angles", "15"},        // radon
      {"sensing.m", ""},               // gaussian rows
      {"sensing.ratio", ""},           // gaussian m = round(ratio * n) when sensing.m is unset
      {"sensing.seed", "0"},           // gaussian
      {"sensing.dictionary", "none"},  // none | dct
      {"reg.kind", "logsq"},
      {"reg.mu", "1"},
      {"reg.floor", "1e-8"},
      {"tikhonov.mode", "exact"},
      {"tikhonov.nagd_steps", "100"},
      {"tikhonov.eta", "auto"},
      {"zstep.method", "ista"},
      {"zstep.linesearch", "backtrack"},
      {"zstep.eta", "auto"},
      {"zstep.alpha", "0.3"},
      {"zstep.shrink", "0.5"},
      {"zstep.eta_init", "1"},
      {"zstep.max_halvings", "50"},
      {"solver.K", "50"},
      {"solver.J", "1"},
      {"solver.b", "10"},
      {"solver.stop_tol", "0"},
      {"solver.max_wall", "none"},
      {"solver.eta_probe", "1"},
      {"solver.cov_kind", "scaled"},
      {"solver.cov_value", "1"},
      {"solver.cov_eps", "1e-4"},
      {"solver.guard", "true"},
      {"net.K", "3"},
      {"net.J", "4"},
      {"net.kernel", "3"},
      {"net.channels", "32,32,32,32,32,32,32,1"},
      {"net.variant", "ista"},
      {"net.cov_kind", "scaled"},
      {"net.cov_init", "0.1"},
      {"net.cov_eps", "1e-4"},
      {"net.gamma_max", "1"},
      {"net.b", "10"},
      {"net.u_mode", "exact"},
      {"net.nagd_steps", "100"},
      {"net.u_eta", "auto"},
      {"net.refine", "true"},
      {"net.init_seed", "0"},
      {"train.lr", "1e-4"},
      {"train.epochs", "2000"},
      {"train.batch", "0"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.eps", "1e-8"},
      {"train.seed", "0"},
      {"train.patience", "0"},
      {"data.snr_db", "inf"},
      {"data.n_samples", "10"},
      {"data.seed", "0"},
      {"data.images", ""},  // directory of PGM files or a CSV file; empty = synthetic
      {"data.csv_max", "255"},
  };
  return schema;
}

class RunConfig {
public:
  RunConfig() = default;

  static RunConfig parse(std::istream& is, const std::string& origin = "<config>") {
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    return parse(is, path.string());
  }

  /// Sets a key, rejecting unknown ones.
  void set(const std::string& key, const std::string& value) {
    if (!config_schema().count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  /// Applies "key=value" overrides (command-line -s/--set).
  void apply_overrides(const std::vector<std::string>& items) {
    for (const auto& item : items) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ConfigError("override '" + item + "' is not key=value");
      set(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
    }
  }

  bool has(const std::string& key) const {
    check_known(key);
    return values_.count(key) > 0 || !config_schema().at(key).empty();
  }
  bool explicitly_set(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key) const {
    check_known(key);
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    const std::string& def = config_schema().at(key);
    if (def.empty()) throw ConfigError("missing required config key '" + key + "'");
    return def;
  }

  double real(const std::string& key) const {
    const std::string s = str(key);
    if (s == "inf" || s == "+inf") return kInf;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0' || std::isnan(v))
      throw ConfigError("config key '" + key + "' expects a number, got '" + s + "'");
    return v;
  }

  long long integer(const std::string& key) const {
    const std::string s = str(key);
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ConfigError("config key '" + key + "' expects an integer, got '" + s + "'");
    return v;
  }

  std::uint64_t seed(const std::string& key) const {
    const long long v = integer(key);
    if (v < 0) throw ConfigError("config key '" + key + "' must be nonnegative");
    return static_cast<std::uint64_t>(v);
  }

  bool boolean(const std::string& key) const {
    const std::string s = str(key);
    if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "off" || s == "no") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + s + "'");
  }

  /// Real value or std::nullopt for "auto"/"none".
  std::optional<double> optional_real(const std::string& key) const {
    const std::string s = str(key);
    if (s == "auto" || s == "none") return std::nullopt;
    return real(key);
  }

  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    std::stringstream ss(str(key));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      int v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (tok.empty() || ec != std::errc() || p != tok.data() + tok.size())
        throw ConfigError("config key '" + key + "' expects a comma-separated integer list");
      out.push_back(v);
    }
    return out;
  }

  /// Text of every key that influences the named sections, for fingerprinting.
  std::string section_text(const std::string& section) const {
    std::ostringstream os;
    for (const auto& [key, def] : config_schema()) {
      if (key.rfind(section + ".", 0) != 0) continue;
      auto it = values_.find(key);
      os << key << '=' << (it != values_.end() ? it->second : def) << ';';
    }
    return os.str();
  }

private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }
  static void check_known(const std::string& key) {
    if (!config_schema().count(key)) throw ConfigError("unknown config key '" + key + "'");
  }

  std::map<std::string, std::string> values_;
};

inline SensingModel build_sensing(const RunConfig& cfg) {
  const std::string kind = cfg.str("sensing.kind");
  const long long side = cfg.integer("sensing.side");
  if (side < 1 || side > 4096) throw ConfigError("sensing.side must lie in [1, 4096]");
  const Index n = static_cast<Index>(side) * side;
  SensingModel model = [&] {
    if (kind == "radon") {
      const long long angles = cfg.integer("sensing.angles");
      if (angles < 1) throw ConfigError("sensing.angles must be >= 1");
      return build_radon(static_cast<int>(side), static_cast<int>(angles));
    }
    if (kind == "gaussian") {
      Index m = 0;
      if (cfg.explicitly_set("sensing.m")) {
        m = cfg.integer("sensing.m");
      } else if (cfg.explicitly_set("sensing.ratio")) {
        m = static_cast<Index>(std::llround(cfg.real("sensing.ratio") * static_cast<double>(n)));
      } else {
        throw ConfigError("missing required config key 'sensing.m' (or 'sensing.ratio')");
      }
      if (m < 1) throw ConfigError("sensing.m must be >= 1");
      return build_gaussian(m, n, cfg.seed("sensing.seed"));
    }
    throw ConfigError("unknown sensing.kind '" + kind + "' (expected radon or gaussian)");
  }();
  const std::string dict = cfg.str("sensing.dictionary");
  if (dict == "dct") return with_dictionary(model, build_dct(n), "dct");
  if (dict != "none") throw ConfigError("unknown sensing.dictionary '" + dict + "' (expected none or dct)");
  return model;
}

inline ScaleRegularizer build_regularizer(const RunConfig& cfg) {
  const std::string kind = cfg.str("reg.kind");
  if (kind == "zero") return ScaleRegularizer::zero();
  if (kind == "logsq") {
    const double mu = cfg.real("reg.mu");
    const double floor = cfg.real("reg.floor");
    if (!(mu > 0.0)) throw ConfigError("reg.mu must be positive");
    if (!(floor > 0.0)) throw ConfigError("reg.floor must be positive");
    return ScaleRegularizer::log_squared(mu, floor);
  }
  throw ConfigError("unknown reg.kind '" + kind + "' (expected logsq or zero)");
}

inline TikhonovMode tikhonov_mode_from_string(const std::string& s, const std::string& key) {
  if (s == "exact") return TikhonovMode::Exact;
  if (s == "nagd") return TikhonovMode::Nagd;
  throw ConfigError("unknown " + key + " '" + s + "' (expected exact or nagd)");
}

inline SolverConfig build_solver_config(const RunConfig& cfg) {
  SolverConfig s;
  s.K = static_cast<int>(cfg.integer("solver.K"));
  s.J = static_cast<int>(cfg.integer("solver.J"));
  s.b = cfg.real("solver.b");
  s.stop_tol = cfg.real("solver.stop_tol");
  s.max_wall = cfg.optional_real("solver.max_wall");
  s.eta_probe = cfg.real("solver.eta_probe");
  s.monotone_guard = cfg.boolean("solver.guard");
  s.tikhonov = tikhonov_mode_from_string(cfg.str("tikhonov.mode"), "tikhonov.mode");
  s.nagd.steps = static_cast<int>(cfg.integer("tikhonov.nagd_steps"));
  s.nagd.eta = cfg.optional_real("tikhonov.eta").value_or(0.0);
  if (s.nagd.steps < 1) throw ConfigError("tikhonov.nagd_steps must be >= 1");
  if (s.nagd.eta < 0.0) throw ConfigError("tikhonov.eta must be positive or auto");
  s.method = zstep_method_from_string(cfg.str("zstep.method"));
  s.linesearch.mode = linesearch_from_string(cfg.str("zstep.linesearch"));
  s.linesearch.eta = cfg.optional_real("zstep.eta").value_or(0.0);
  s.linesearch.alpha = cfg.real("zstep.alpha");
  s.linesearch.shrink = cfg.real("zstep.shrink");
  s.linesearch.eta_init = cfg.real("zstep.eta_init");
  s.linesearch.max_halvings = static_cast<int>(cfg.integer("zstep.max_halvings"));
  if (!(s.eta_probe > 0.0)) throw ConfigError("solver.eta_probe must be positive");
  s.validate();
  return s;
}

inline CovarianceParam build_solver_covariance(const RunConfig& cfg, Index n) {
  const double value = cfg.real("solver.cov_value");
  const double eps = cfg.real("solver.cov_eps");
  if (!(eps > 0.0)) throw ConfigError("solver.cov_eps must be positive");
  if (!(value > eps)) throw ConfigError("solver.cov_value must exceed solver.cov_eps");
  return CovarianceParam::initial(cov_kind_from_string(cfg.str("solver.cov_kind")), n, value, eps);
}

inline NetConfig build_net_config(const RunConfig& cfg) {
  NetConfig c;
  c.K = static_cast<int>(cfg.integer("net.K"));
  c.J = static_cast<int>(cfg.integer("net.J"));
  c.kernel = static_cast<int>(cfg.integer("net.kernel"));
  c.channels = cfg.int_list("net.channels");
  c.variant = net_variant_from_string(cfg.str("net.variant"));
  c.cov_kind = cov_kind_from_string(cfg.str("net.cov_kind"));
  c.cov_init = cfg.real("net.cov_init");
  c.cov_eps = cfg.real("net.cov_eps");
  c.gamma_max = cfg.real("net.gamma_max");
  c.b = cfg.real("net.b");
  c.u_mode = tikhonov_mode_from_string(cfg.str("net.u_mode"), "net.u_mode");
  c.nagd_steps = static_cast<int>(cfg.integer("net.nagd_steps"));
  c.u_eta = cfg.optional_real("net.u_eta").value_or(0.0);
  c.refine = cfg.boolean("net.refine");
  if (!(c.cov_init > c.cov_eps)) throw ConfigError("net.cov_init must exceed net.cov_eps");
  if (c.u_eta < 0.0) throw ConfigError("net.u_eta must be positive or auto");
  c.validate();
  return c;
}

inline TrainConfig build_train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.lr = cfg.real("train.lr");
  t.epochs = static_cast<int>(cfg.integer("train.epochs"));
  t.batch = static_cast<int>(cfg.integer("train.batch"));
  t.beta1 = cfg.real("train.beta1");
  t.beta2 = cfg.real("train.beta2");
  t.eps_adam = cfg.real("train.eps");
  t.seed = cfg.seed("train.seed");
  t.patience = static_cast<int>(cfg.integer("train.patience"));
  t.validate();
  return t;
}

}  // namespace cginvert
