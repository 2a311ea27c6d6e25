#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "murphy/common.hpp"
#include "murphy/eval_harness.hpp"
#include "murphy/trainer.hpp"

// Flat key = value run configuration. Algorithm-critical keys (mode, turn
// budget, schedule, credit/pruning strategy, gamma, budget, beta, clip_eps)
// have no silent defaults: they must come from a preset or be set
// explicitly. Unknown keys and out-of-domain values fail with the offending
// key named.

namespace murphy::config {

struct RunConfig {
  train::TrainConfig train;
  eval::EvalConfig eval;
  bool dump_trees = false;
};

// Keys that must be set (by preset or explicitly) before a run may start.
inline const std::vector<std::string>& critical_keys() {
  static const std::vector<std::string> keys = {
      "mode",          "max_turns", "schedule", "credit_strategy",
      "gamma",         "budget",    "beta",     "clip_eps",
      "prune_strategy"};
  return keys;
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" +
                      v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key +
                      "': expected a non-negative integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" +
                      v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" +
                    v + "'");
}

inline std::vector<int> parse_schedule(const std::string& key,
                                       const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) {
      throw ConfigError("config key '" + key +
                        "': expected comma-separated integers, got '" + v +
                        "'");
    }
    out.push_back(static_cast<int>(parse_int(key, part)));
  }
  if (out.empty()) {
    throw ConfigError("config key '" + key + "': schedule must be nonempty");
  }
  return out;
}

}  // namespace detail

class ConfigSchema {
 public:
  using Setter = std::function<void(RunConfig&, const std::string& key,
                                    const std::string& value)>;

  static const ConfigSchema& instance() {
    static const ConfigSchema schema;
    return schema;
  }

  bool known(const std::string& key) const {
    return setters_.count(key) != 0;
  }

  void set(RunConfig& cfg, const std::string& key,
           const std::string& value) const {
    auto it = setters_.find(key);
    if (it == setters_.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    it->second(cfg, key, value);
  }

  const std::vector<std::string>& key_order() const { return order_; }

 private:
  ConfigSchema() {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_int;
    using detail::parse_schedule;
    using detail::parse_u64;
    auto add = [&](const std::string& key, Setter s) {
      setters_[key] = std::move(s);
      order_.push_back(key);
    };
    add("mode", [](RunConfig& c, const std::string&, const std::string& v) {
      c.train.mode = train::mode_from_name(v);
    });
    add("max_turns", [](RunConfig& c, const std::string& k, const std::string& v) {
      long long n = parse_int(k, v);
      if (n < 1) throw ConfigError("config key 'max_turns': must be >= 1");
      c.train.max_turns = static_cast<int>(n);
    });
    add("schedule", [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.schedule = parse_schedule(k, v);
    });
    add("credit_strategy",
        [](RunConfig& c, const std::string&, const std::string& v) {
          c.train.credit.strategy = credit::strategy_from_name(v);
        });
    add("gamma", [](RunConfig& c, const std::string& k, const std::string& v) {
      double g = parse_double(k, v);
      if (g < 0.0 || g > 1.0) {
        throw ConfigError("config key 'gamma': must be in [0,1], got " + v);
      }
      c.train.credit.gamma = g;
    });
    add("prune_strategy",
        [](RunConfig& c, const std::string&, const std::string& v) {
          c.train.prune.strategy = prune::strategy_from_name(v);
        });
    add("budget", [](RunConfig& c, const std::string& k, const std::string& v) {
      long long b = parse_int(k, v);
      if (b < 1) throw ConfigError("config key 'budget': must be >= 1");
      c.train.prune.budget = static_cast<int>(b);
    });
    add("alpha1", [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.prune.alpha1 = parse_double(k, v);
    });
    add("alpha2", [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.prune.alpha2 = parse_double(k, v);
    });
    add("clip_eps", [](RunConfig& c, const std::string& k, const std::string& v) {
      double e = parse_double(k, v);
      if (e <= 0.0) throw ConfigError("config key 'clip_eps': must be > 0");
      c.train.objective.clip_eps = e;
    });
    add("beta", [](RunConfig& c, const std::string& k, const std::string& v) {
      double b = parse_double(k, v);
      if (b < 0.0) throw ConfigError("config key 'beta': must be >= 0");
      c.train.objective.beta = b;
    });
    add("adv_eps", [](RunConfig& c, const std::string& k, const std::string& v) {
      double e = parse_double(k, v);
      if (e < 0.0) throw ConfigError("config key 'adv_eps': must be >= 0");
      c.train.objective.adv_eps = e;
    });
    add("learning_rate",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          double lr = parse_double(k, v);
          if (lr < 0.0) {
            throw ConfigError("config key 'learning_rate': must be >= 0");
          }
          c.train.learning_rate = lr;
        });
    add("weight_decay",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          double wd = parse_double(k, v);
          if (wd < 0.0) {
            throw ConfigError("config key 'weight_decay': must be >= 0");
          }
          c.train.weight_decay = wd;
        });
    add("steps", [](RunConfig& c, const std::string& k, const std::string& v) {
      long long n = parse_int(k, v);
      if (n < 0) throw ConfigError("config key 'steps': must be >= 0");
      c.train.steps = static_cast<int>(n);
    });
    add("tasks_per_step",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          long long n = parse_int(k, v);
          if (n < 1) {
            throw ConfigError("config key 'tasks_per_step': must be >= 1");
          }
          c.train.tasks_per_step = static_cast<int>(n);
        });
    add("family", [](RunConfig& c, const std::string&, const std::string& v) {
      c.train.family = env::family_from_name(v);
    });
    add("env_seed", [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.env_seed = parse_u64(k, v);
    });
    add("sample_seed",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.train.sample_seed = parse_u64(k, v);
        });
    add("buckets", [](RunConfig& c, const std::string& k, const std::string& v) {
      long long b = parse_int(k, v);
      if (b < 1) throw ConfigError("config key 'buckets': must be >= 1");
      c.train.buckets = static_cast<int>(b);
      c.eval.buckets = static_cast<int>(b);
    });
    add("train_temperature",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          double t = parse_double(k, v);
          if (t <= 0.0) {
            throw ConfigError("config key 'train_temperature': must be > 0");
          }
          c.train.train_temperature = t;
        });
    add("checkpoint_every",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          long long n = parse_int(k, v);
          if (n < 1) {
            throw ConfigError("config key 'checkpoint_every': must be >= 1");
          }
          c.train.checkpoint_every = static_cast<int>(n);
        });
    add("eval_max_iterations",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          long long n = parse_int(k, v);
          if (n < 1) {
            throw ConfigError(
                "config key 'eval_max_iterations': must be >= 1");
          }
          c.eval.max_iterations = static_cast<int>(n);
        });
    add("eval_repetitions",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          long long n = parse_int(k, v);
          if (n < 1) {
            throw ConfigError("config key 'eval_repetitions': must be >= 1");
          }
          c.eval.repetitions = static_cast<int>(n);
        });
    add("eval_temperature",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          double t = parse_double(k, v);
          if (t <= 0.0) {
            throw ConfigError("config key 'eval_temperature': must be > 0");
          }
          c.eval.temperature = t;
        });
    add("eval_top_p",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          double p = parse_double(k, v);
          if (p <= 0.0 || p > 1.0) {
            throw ConfigError("config key 'eval_top_p': must be in (0,1]");
          }
          c.eval.top_p = p;
        });
    add("eval_seed", [](RunConfig& c, const std::string& k, const std::string& v) {
      c.eval.seed = parse_u64(k, v);
    });
    add("dump_trees",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.dump_trees = parse_bool(k, v);
        });
  }

  std::map<std::string, Setter> setters_;
  std::vector<std::string> order_;
};

// Named presets covering every critical key. "reference-2turn" is the main
// 2-stage setting; "reference-3turn" is the 3-stage pruning-ablation
// setting. Both carry the full-scale learning rate; toy runs override it.
inline std::vector<std::pair<std::string, std::string>> preset_entries(
    const std::string& name) {
  std::vector<std::pair<std::string, std::string>> base = {
      {"mode", "murphy"},        {"credit_strategy", "mars"},
      {"gamma", "0.9"},          {"prune_strategy", "none"},
      {"budget", "4"},           {"alpha1", "0"},
      {"alpha2", "1"},           {"clip_eps", "0.2"},
      {"beta", "0.04"},          {"learning_rate", "1e-6"},
      {"weight_decay", "0.1"},   {"eval_temperature", "0.6"},
      {"eval_max_iterations", "3"}, {"eval_repetitions", "3"},
  };
  if (name == "reference-2turn") {
    base.push_back({"max_turns", "2"});
    base.push_back({"schedule", "8,8"});
    return base;
  }
  if (name == "reference-3turn") {
    base.push_back({"max_turns", "3"});
    base.push_back({"schedule", "8,8,8"});
    base.push_back({"prune_strategy", "intra"});
    return base;
  }
  throw ConfigError("unknown preset '" + name +
                    "' (known: reference-2turn, reference-3turn)");
}

class ConfigBuilder {
 public:
  void apply_preset(const std::string& name) {
    for (const auto& [k, v] : preset_entries(name)) set(k, v);
    preset_ = name;
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "preset") {
      apply_preset(value);
      return;
    }
    ConfigSchema::instance().set(cfg_, key, value);
    values_[key] = value;
  }

  // Line format: 'key = value', '#' comments, blank lines ignored.
  void load_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": expected 'key = value', got '" + line + "'");
      }
      std::string key = detail::trim(line.substr(0, eq));
      std::string value = detail::trim(line.substr(eq + 1));
      if (key.empty() || value.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": empty key or value");
      }
      set(key, value);
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    load_text(ss.str());
  }

  // All critical keys must have been provided; then full cross-validation.
  RunConfig finalize() const {
    std::vector<std::string> missing;
    for (const std::string& k : critical_keys()) {
      if (!values_.count(k)) missing.push_back(k);
    }
    if (!missing.empty()) {
      std::string msg = "config: missing required keys (no silent defaults):";
      for (const std::string& k : missing) msg += " " + k;
      throw ConfigError(msg);
    }
    cfg_.train.validate();
    cfg_.eval.validate();
    return cfg_;
  }

  // Deterministic rendering of the effective settings; its hash identifies
  // the run.
  std::string canonical_text() const {
    std::string out;
    for (const std::string& key : ConfigSchema::instance().key_order()) {
      auto it = values_.find(key);
      if (it != values_.end()) out += key + " = " + it->second + "\n";
    }
    return out;
  }

  std::string config_hash() const {
    std::uint64_t h = Fnv64().str(canonical_text()).digest();
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
  }

  const std::string& preset() const { return preset_; }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  RunConfig cfg_;
  std::map<std::string, std::string> values_;
  std::string preset_;
};

}  // namespace murphy::config
