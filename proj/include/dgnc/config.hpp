// Flat key=value run configuration.
//
// One schema covers model shape, optimizer, scheduler, and data defaults.
// Unknown keys are errors (typo protection). '#' starts a comment line.
// d_ff=0 and sparsity_k=0 mean "derive": 4*d_model and ceil(V/4).
#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dgnc/common.hpp"
#include "dgnc/encoder.hpp"

namespace dgnc {

struct Config {
  // data
  std::size_t window_size = 20;
  std::size_t regions = 200;
  std::size_t timepoints = 100;
  // model
  std::size_t heads = 4;    // window attention and encoder attention
  std::size_t layers = 5;   // encoder depth
  std::size_t d_model = 64;
  std::size_t d_gcn = 64;
  std::size_t d_ff = 0;         // 0 -> 4*d_model
  std::size_t gcn_depth = 1;
  std::size_t sparsity_k = 0;   // 0 -> ceil(V/4)
  std::size_t mlp_hidden = 32;
  std::string positional = "sinusoidal";  // or "none"
  // training
  double lr = 0.001;
  double scheduler_factor = 0.1;
  std::size_t scheduler_patience = 5;
  double min_improvement = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  double val_fraction = 0.1;
  std::uint64_t seed = 1;

  std::size_t ff_width() const { return d_ff ? d_ff : 4 * d_model; }
  std::size_t effective_sparsity(std::size_t v) const {
    return sparsity_k ? sparsity_k : (v + 3) / 4;
  }

  EncoderConfig encoder_config() const {
    EncoderConfig e;
    e.num_layers = layers;
    e.num_heads = heads;
    e.d_model = d_model;
    e.d_ff = ff_width();
    e.sinusoidal = positional == "sinusoidal";
    return e;
  }

  void validate() const {
    if (window_size == 0 || regions == 0 || timepoints == 0 || heads == 0 || layers == 0 ||
        d_model == 0 || d_gcn == 0 || gcn_depth == 0 || mlp_hidden == 0 || epochs == 0 ||
        batch_size == 0) {
      throw ConfigError("config: all sizes must be positive");
    }
    if (d_model % heads != 0) {
      throw ConfigError("config: d_model " + std::to_string(d_model) +
                        " not divisible by heads " + std::to_string(heads));
    }
    if (positional != "sinusoidal" && positional != "none") {
      throw ConfigError("config: positional must be 'sinusoidal' or 'none', got '" + positional +
                        "'");
    }
    if (lr <= 0 || scheduler_factor <= 0 || scheduler_factor >= 1 || adam_epsilon <= 0) {
      throw ConfigError("config: lr and adam_epsilon must be positive, scheduler_factor in (0,1)");
    }
    if (val_fraction < 0 || val_fraction >= 1) {
      throw ConfigError("config: val_fraction must lie in [0,1)");
    }
    if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1) {
      throw ConfigError("config: adam betas must lie in [0,1)");
    }
    if (sparsity_k > regions) {
      throw ConfigError("config: sparsity_k " + std::to_string(sparsity_k) +
                        " exceeds regions " + std::to_string(regions));
    }
  }
};

namespace detail {

inline bool parse_size(const std::string& s, std::size_t& out) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return false;
  out = static_cast<std::size_t>(v);
  return true;
}

inline bool parse_u64(const std::string& s, std::uint64_t& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace detail

inline Config parse_config_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        t + "'");
    }
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    auto bad = [&]() {
      return ConfigError("config line " + std::to_string(lineno) + ": bad value '" + value +
                         "' for key '" + key + "'");
    };
    double d = 0;
    if (key == "window_size") {
      if (!detail::parse_size(value, cfg.window_size)) throw bad();
    } else if (key == "regions") {
      if (!detail::parse_size(value, cfg.regions)) throw bad();
    } else if (key == "timepoints") {
      if (!detail::parse_size(value, cfg.timepoints)) throw bad();
    } else if (key == "heads") {
      if (!detail::parse_size(value, cfg.heads)) throw bad();
    } else if (key == "layers") {
      if (!detail::parse_size(value, cfg.layers)) throw bad();
    } else if (key == "d_model") {
      if (!detail::parse_size(value, cfg.d_model)) throw bad();
    } else if (key == "d_gcn") {
      if (!detail::parse_size(value, cfg.d_gcn)) throw bad();
    } else if (key == "d_ff") {
      if (!detail::parse_size(value, cfg.d_ff)) throw bad();
    } else if (key == "gcn_depth") {
      if (!detail::parse_size(value, cfg.gcn_depth)) throw bad();
    } else if (key == "sparsity_k") {
      if (!detail::parse_size(value, cfg.sparsity_k)) throw bad();
    } else if (key == "mlp_hidden") {
      if (!detail::parse_size(value, cfg.mlp_hidden)) throw bad();
    } else if (key == "positional") {
      cfg.positional = value;
    } else if (key == "lr") {
      if (!detail::parse_double(value, d)) throw bad();
      cfg.lr = d;
    } else if (key == "scheduler_factor") {
      if (!detail::parse_double(value, d)) throw bad();
      cfg.scheduler_factor = d;
    } else if (key == "scheduler_patience") {
      if (!detail::parse_size(value, cfg.scheduler_patience)) throw bad();
    } else if (key == "min_improvement") {
      if (!detail::parse_double(value, d)) throw bad();
      cfg.min_improvement = d;
    } else if (key == "adam_beta1") {
      if (!detail::parse_double(value, d)) throw bad();
      cfg.adam_beta1 = d;
    } else if (key == "adam_beta2") {
      if (!detail::parse_double(value, d)) throw bad();
      cfg.adam_beta2 = d;
    } else if (key == "adam_epsilon") {
      if (!detail::parse_double(value, d)) throw bad();
      cfg.adam_epsilon = d;
    } else if (key == "epochs") {
      if (!detail::parse_size(value, cfg.epochs)) throw bad();
    } else if (key == "batch_size") {
      if (!detail::parse_size(value, cfg.batch_size)) throw bad();
    } else if (key == "val_fraction") {
      if (!detail::parse_double(value, d)) throw bad();
      cfg.val_fraction = d;
    } else if (key == "seed") {
      if (!detail::parse_u64(value, cfg.seed)) throw bad();
    } else {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

// Canonical serialization: sorted keys, shortest round-trip numbers. Parsing
// the echo reproduces the config exactly.
inline std::string config_echo(const Config& cfg) {
  std::map<std::string, std::string> kv;
  kv["window_size"] = std::to_string(cfg.window_size);
  kv["regions"] = std::to_string(cfg.regions);
  kv["timepoints"] = std::to_string(cfg.timepoints);
  kv["heads"] = std::to_string(cfg.heads);
  kv["layers"] = std::to_string(cfg.layers);
  kv["d_model"] = std::to_string(cfg.d_model);
  kv["d_gcn"] = std::to_string(cfg.d_gcn);
  kv["d_ff"] = std::to_string(cfg.d_ff);
  kv["gcn_depth"] = std::to_string(cfg.gcn_depth);
  kv["sparsity_k"] = std::to_string(cfg.sparsity_k);
  kv["mlp_hidden"] = std::to_string(cfg.mlp_hidden);
  kv["positional"] = cfg.positional;
  kv["lr"] = fmt_real(cfg.lr);
  kv["scheduler_factor"] = fmt_real(cfg.scheduler_factor);
  kv["scheduler_patience"] = std::to_string(cfg.scheduler_patience);
  kv["min_improvement"] = fmt_real(cfg.min_improvement);
  kv["adam_beta1"] = fmt_real(cfg.adam_beta1);
  kv["adam_beta2"] = fmt_real(cfg.adam_beta2);
  kv["adam_epsilon"] = fmt_real(cfg.adam_epsilon);
  kv["epochs"] = std::to_string(cfg.epochs);
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["val_fraction"] = fmt_real(cfg.val_fraction);
  kv["seed"] = std::to_string(cfg.seed);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

}  // namespace dgnc
