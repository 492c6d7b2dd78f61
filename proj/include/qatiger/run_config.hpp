// Line-oriented `key = value` run configuration. Unknown keys are rejected,
// parsing is total, and every accepted file round-trips through write.
#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "qatiger/synthetic.hpp"
#include "qatiger/train.hpp"

namespace qatiger {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  TaskConfig task;

  // optimizer schedule
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double decay_factor = 0.1;
  int decay_every = 8;
  int epochs = 15;
  Index batch_size = 32;

  // pipeline mode
  std::string strategy = "gaussian_experts";
  bool fusion = true;
  bool time_normalize = false;
  Index top_k = 10;
  std::string dtype = "single";  // training precision; tests and oracles stay double

  // output paths
  std::string data_path = "data.qtgf";
  std::string ckpt_dir = "checkpoints";
  std::string log_path = "train_log.csv";
  std::string results_path = "results.csv";
  std::string curves_path = "curves.csv";

  PipelineMode mode() const {
    PipelineMode m;
    m.strategy = parse_pooling_strategy(strategy);
    m.fusion_on = fusion;
    m.time_normalize = time_normalize;
    m.top_k = top_k;
    return m;
  }

  template <typename Scalar>
  TrainOptions<Scalar> train_options() const {
    TrainOptions<Scalar> o;
    o.epochs = epochs;
    o.batch_size = batch_size;
    o.adam.lr = static_cast<Scalar>(lr);
    o.adam.beta1 = static_cast<Scalar>(beta1);
    o.adam.beta2 = static_cast<Scalar>(beta2);
    o.adam.eps = static_cast<Scalar>(adam_eps);
    o.adam.decay_factor = static_cast<Scalar>(decay_factor);
    o.adam.decay_every = decay_every;
    o.seed = task.seed;
    return o;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline long long parse_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': not an integer: '" + value + "'");
  }
  if (used != value.size()) throw ConfigError("key '" + key + "': trailing junk in '" + value + "'");
  return v;
}

inline double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': not a number: '" + value + "'");
  }
  if (used != value.size()) throw ConfigError("key '" + key + "': trailing junk in '" + value + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "': expected on/off, got '" + value + "'");
}

inline std::string families_to_string(const std::vector<QuestionFamily>& fams) {
  std::string out;
  for (std::size_t i = 0; i < fams.size(); ++i) {
    if (i) out += ",";
    out += to_string(fams[i]);
  }
  return out;
}

inline std::vector<QuestionFamily> parse_families(const std::string& value) {
  std::vector<QuestionFamily> fams;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) fams.push_back(parse_family(item));
  }
  if (fams.empty()) throw ConfigError("key 'families': empty list");
  return fams;
}

}  // namespace detail

inline void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  auto as_index = [&](Index lo = 1) {
    const long long v = parse_int(key, value);
    if (v < lo) throw ConfigError("key '" + key + "': value below " + std::to_string(lo));
    return static_cast<Index>(v);
  };

  if (key == "t") cfg.task.t = as_index(1);
  else if (key == "dv") cfg.task.dv = as_index(1);
  else if (key == "da") cfg.task.da = as_index(1);
  else if (key == "dq") cfg.task.dq = as_index(1);
  else if (key == "m_prime") cfg.task.m_prime = as_index(1);
  else if (key == "n_words") cfg.task.n_words = as_index(1);
  else if (key == "classes") cfg.task.classes = as_index(2);
  else if (key == "experts") cfg.task.experts = as_index(1);
  else if (key == "heads") cfg.task.heads = as_index(1);
  else if (key == "dim") cfg.task.d = as_index(1);
  else if (key == "event_min") cfg.task.event_min = static_cast<int>(parse_int(key, value));
  else if (key == "event_max") cfg.task.event_max = static_cast<int>(parse_int(key, value));
  else if (key == "noise") cfg.task.noise = parse_double(key, value);
  else if (key == "dropout") cfg.task.dropout = parse_double(key, value);
  else if (key == "signatures") cfg.task.signature_count = as_index(1);
  else if (key == "families") cfg.task.families = detail::parse_families(value);
  else if (key == "train_size") cfg.task.train_size = as_index(1);
  else if (key == "val_size") cfg.task.val_size = as_index(0);
  else if (key == "test_size") cfg.task.test_size = as_index(1);
  else if (key == "seed") cfg.task.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "lr") cfg.lr = parse_double(key, value);
  else if (key == "beta1") cfg.beta1 = parse_double(key, value);
  else if (key == "beta2") cfg.beta2 = parse_double(key, value);
  else if (key == "adam_eps") cfg.adam_eps = parse_double(key, value);
  else if (key == "decay_factor") cfg.decay_factor = parse_double(key, value);
  else if (key == "decay_every") cfg.decay_every = static_cast<int>(parse_int(key, value));
  else if (key == "epochs") {
    const long long v = parse_int(key, value);
    if (v < 0) throw ConfigError("key 'epochs': must be nonnegative");
    cfg.epochs = static_cast<int>(v);
  } else if (key == "batch_size") cfg.batch_size = as_index(1);
  else if (key == "strategy") {
    try {
      parse_pooling_strategy(value);
    } catch (const ContractError& e) {
      throw ConfigError(std::string("key 'strategy': ") + e.what());
    }
    cfg.strategy = value;
  } else if (key == "fusion") cfg.fusion = parse_bool(key, value);
  else if (key == "time_normalize") cfg.time_normalize = parse_bool(key, value);
  else if (key == "top_k") cfg.top_k = as_index(1);
  else if (key == "dtype") {
    if (value != "single" && value != "double") {
      throw ConfigError("key 'dtype': expected single or double, got '" + value + "'");
    }
    cfg.dtype = value;
  } else if (key == "data_path") cfg.data_path = value;
  else if (key == "ckpt_dir") cfg.ckpt_dir = value;
  else if (key == "log_path") cfg.log_path = value;
  else if (key == "results_path") cfg.results_path = value;
  else if (key == "curves_path") cfg.curves_path = value;
  else throw ConfigError("unknown config key: '" + key + "'");
}

inline RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    apply_config_line(cfg, key, value);
  }
  return cfg;
}

inline std::string write_run_config(const RunConfig& cfg) {
  using detail::format_double;
  std::string out;
  auto kv = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  out += "# task\n";
  kv("t", std::to_string(cfg.task.t));
  kv("dv", std::to_string(cfg.task.dv));
  kv("da", std::to_string(cfg.task.da));
  kv("dq", std::to_string(cfg.task.dq));
  kv("m_prime", std::to_string(cfg.task.m_prime));
  kv("n_words", std::to_string(cfg.task.n_words));
  kv("classes", std::to_string(cfg.task.classes));
  kv("experts", std::to_string(cfg.task.experts));
  kv("heads", std::to_string(cfg.task.heads));
  kv("dim", std::to_string(cfg.task.d));
  kv("event_min", std::to_string(cfg.task.event_min));
  kv("event_max", std::to_string(cfg.task.event_max));
  kv("noise", format_double(cfg.task.noise));
  kv("dropout", format_double(cfg.task.dropout));
  kv("signatures", std::to_string(cfg.task.signature_count));
  kv("families", detail::families_to_string(cfg.task.families));
  kv("train_size", std::to_string(cfg.task.train_size));
  kv("val_size", std::to_string(cfg.task.val_size));
  kv("test_size", std::to_string(cfg.task.test_size));
  kv("seed", std::to_string(cfg.task.seed));
  out += "# optimizer\n";
  kv("lr", format_double(cfg.lr));
  kv("beta1", format_double(cfg.beta1));
  kv("beta2", format_double(cfg.beta2));
  kv("adam_eps", format_double(cfg.adam_eps));
  kv("decay_factor", format_double(cfg.decay_factor));
  kv("decay_every", std::to_string(cfg.decay_every));
  kv("epochs", std::to_string(cfg.epochs));
  kv("batch_size", std::to_string(cfg.batch_size));
  out += "# pipeline\n";
  kv("strategy", cfg.strategy);
  kv("fusion", cfg.fusion ? "on" : "off");
  kv("time_normalize", cfg.time_normalize ? "on" : "off");
  kv("top_k", std::to_string(cfg.top_k));
  kv("dtype", cfg.dtype);
  out += "# io\n";
  kv("data_path", cfg.data_path);
  kv("ckpt_dir", cfg.ckpt_dir);
  kv("log_path", cfg.log_path);
  kv("results_path", cfg.results_path);
  kv("curves_path", cfg.curves_path);
  return out;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

inline void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write config: " + path);
  f << write_run_config(cfg);
}

}  // namespace qatiger
