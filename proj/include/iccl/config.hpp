#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "iccl/data.hpp"
#include "iccl/errors.hpp"
#include "iccl/labels.hpp"
#include "iccl/losses.hpp"
#include "iccl/model.hpp"

namespace iccl {

struct DataConfig {
  std::string kind = "blobs";  // blobs | file
  std::string path;
  int classes = 10;
  int dim = 32;
  int per_class = 200;
  double spread = 3.0;
  double sigma = 1.0;
};

struct ModelConfig {
  int encoder_hidden = 64;
  int encoder_layers = 2;
  int embed_dim = 64;
  int proj_dim = 16;
  int predictor_hidden = 32;
  bool standardize = true;
  bool momentum_encoder = true;
  double ema_momentum = 0.99;
};

struct OptConfig {
  std::string kind = "sgd";  // sgd | lars
  double lr = 0.2;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  int warmup_epochs = 0;
};

struct LabelsConfig {
  std::string kind = "softmax";  // softmax | sinkhorn | centering
  int sinkhorn_iters = 3;
  double center_momentum = 0.9;
};

struct EvalConfig {
  int knn_k = 5;
  int precision_k = 5;
  int probe_epochs = 100;
  double probe_lr = 0.1;
  double test_fraction = 0.2;
};

struct SweepConfig {
  std::string seed_policy = "shared";  // shared | increment
};

struct RunConfig {
  std::uint64_t seed = 1;
  int epochs = 30;
  int batch_size = 128;
  double switch_fraction = 0.5;
  bool symmetrize = true;
  double lambda_r = 1.0;
  std::string output_dir = "out";

  TemperatureConfig tau;  // tau1 = 0.1, tau2 = 0.07, adaptive off
  DataConfig data;
  AugmentConfig augment;
  ModelConfig model;
  OptConfig opt;
  LabelsConfig labels;
  EvalConfig eval;
  SweepConfig sweep;

  // not part of the key grammar: set by the CLI, echoed nowhere
  bool per_step_log = false;
  // raw text the config was parsed from, echoed byte-identically
  std::string echo;
};

namespace cfgdetail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline double to_double(const std::string& key, std::string_view v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': bad number '" + std::string(v) + "'");
  }
  return out;
}

inline long to_long(const std::string& key, std::string_view v) {
  long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': bad integer '" + std::string(v) + "'");
  }
  return out;
}

inline bool to_bool(const std::string& key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + std::string(v) +
                    "'");
}

inline std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct KeyHandler {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<KeyHandler>& key_registry() {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };

  static const std::vector<KeyHandler> keys = {
      {"seed",
       [](RunConfig& c, const std::string& v) {
         const long s = to_long("seed", v);
         if (s < 0) throw ConfigError("config key 'seed': must be >= 0");
         c.seed = static_cast<std::uint64_t>(s);
       },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"epochs",
       [require](RunConfig& c, const std::string& v) {
         c.epochs = static_cast<int>(to_long("epochs", v));
         require(c.epochs >= 1, "config key 'epochs': must be >= 1");
       },
       [](const RunConfig& c) { return std::to_string(c.epochs); }},
      {"batch_size",
       [require](RunConfig& c, const std::string& v) {
         c.batch_size = static_cast<int>(to_long("batch_size", v));
         require(c.batch_size >= 2, "config key 'batch_size': must be >= 2");
       },
       [](const RunConfig& c) { return std::to_string(c.batch_size); }},
      {"switch_fraction",
       [require](RunConfig& c, const std::string& v) {
         c.switch_fraction = to_double("switch_fraction", v);
         require(c.switch_fraction >= 0.0 && c.switch_fraction <= 1.0,
                 "config key 'switch_fraction': must be in [0, 1]");
       },
       [](const RunConfig& c) { return fmt_double(c.switch_fraction); }},
      {"symmetrize",
       [](RunConfig& c, const std::string& v) { c.symmetrize = to_bool("symmetrize", v); },
       [](const RunConfig& c) { return c.symmetrize ? "true" : "false"; }},
      {"lambda_r",
       [require](RunConfig& c, const std::string& v) {
         c.lambda_r = to_double("lambda_r", v);
         require(c.lambda_r >= 0.0 && std::isfinite(c.lambda_r),
                 "config key 'lambda_r': must be >= 0");
       },
       [](const RunConfig& c) { return fmt_double(c.lambda_r); }},
      {"output_dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; },
       [](const RunConfig& c) { return c.output_dir; }},

      {"tau.tau1",
       [require](RunConfig& c, const std::string& v) {
         c.tau.tau1 = to_double("tau.tau1", v);
         require(c.tau.tau1 > 0.0 && c.tau.tau1 <= 10.0,
                 "config key 'tau.tau1': must be in (0, 10]");
       },
       [](const RunConfig& c) { return fmt_double(c.tau.tau1); }},
      {"tau.tau2",
       [require](RunConfig& c, const std::string& v) {
         c.tau.tau2 = to_double("tau.tau2", v);
         require(c.tau.tau2 > 0.0 && c.tau.tau2 <= 10.0,
                 "config key 'tau.tau2': must be in (0, 10]");
       },
       [](const RunConfig& c) { return fmt_double(c.tau.tau2); }},
      {"tau.adaptive",
       [](RunConfig& c, const std::string& v) {
         if (v == "off") {
           c.tau.adaptive_tau1 = AdaptiveTau1::off;
         } else if (v == "min") {
           c.tau.adaptive_tau1 = AdaptiveTau1::min_rule;
         } else if (v == "norm") {
           c.tau.adaptive_tau1 = AdaptiveTau1::norm_rule;
         } else {
           throw ConfigError("config key 'tau.adaptive': expected off, min or norm");
         }
       },
       [](const RunConfig& c) {
         switch (c.tau.adaptive_tau1) {
           case AdaptiveTau1::off: return std::string("off");
           case AdaptiveTau1::min_rule: return std::string("min");
           case AdaptiveTau1::norm_rule: return std::string("norm");
         }
         return std::string("off");
       }},

      {"labels.kind",
       [](RunConfig& c, const std::string& v) {
         label_kind_from_string(v);  // throws on unknown
         c.labels.kind = v;
       },
       [](const RunConfig& c) { return c.labels.kind; }},
      {"labels.sinkhorn_iters",
       [require](RunConfig& c, const std::string& v) {
         c.labels.sinkhorn_iters = static_cast<int>(to_long("labels.sinkhorn_iters", v));
         require(c.labels.sinkhorn_iters >= 1,
                 "config key 'labels.sinkhorn_iters': must be >= 1");
       },
       [](const RunConfig& c) { return std::to_string(c.labels.sinkhorn_iters); }},
      {"labels.center_momentum",
       [require](RunConfig& c, const std::string& v) {
         c.labels.center_momentum = to_double("labels.center_momentum", v);
         require(c.labels.center_momentum >= 0.0 && c.labels.center_momentum < 1.0,
                 "config key 'labels.center_momentum': must be in [0, 1)");
       },
       [](const RunConfig& c) { return fmt_double(c.labels.center_momentum); }},

      {"data.kind",
       [require](RunConfig& c, const std::string& v) {
         require(v == "blobs" || v == "file", "config key 'data.kind': expected blobs or file");
         c.data.kind = v;
       },
       [](const RunConfig& c) { return c.data.kind; }},
      {"data.path", [](RunConfig& c, const std::string& v) { c.data.path = v; },
       [](const RunConfig& c) { return c.data.path; }},
      {"data.classes",
       [require](RunConfig& c, const std::string& v) {
         c.data.classes = static_cast<int>(to_long("data.classes", v));
         require(c.data.classes >= 2, "config key 'data.classes': must be >= 2");
       },
       [](const RunConfig& c) { return std::to_string(c.data.classes); }},
      {"data.dim",
       [require](RunConfig& c, const std::string& v) {
         c.data.dim = static_cast<int>(to_long("data.dim", v));
         require(c.data.dim >= 2, "config key 'data.dim': must be >= 2");
       },
       [](const RunConfig& c) { return std::to_string(c.data.dim); }},
      {"data.per_class",
       [require](RunConfig& c, const std::string& v) {
         c.data.per_class = static_cast<int>(to_long("data.per_class", v));
         require(c.data.per_class >= 1, "config key 'data.per_class': must be >= 1");
       },
       [](const RunConfig& c) { return std::to_string(c.data.per_class); }},
      {"data.spread",
       [require](RunConfig& c, const std::string& v) {
         c.data.spread = to_double("data.spread", v);
         require(c.data.spread >= 0.0, "config key 'data.spread': must be >= 0");
       },
       [](const RunConfig& c) { return fmt_double(c.data.spread); }},
      {"data.sigma",
       [require](RunConfig& c, const std::string& v) {
         c.data.sigma = to_double("data.sigma", v);
         require(c.data.sigma >= 0.0, "config key 'data.sigma': must be >= 0");
       },
       [](const RunConfig& c) { return fmt_double(c.data.sigma); }},

      {"augment.noise_sigma",
       [require](RunConfig& c, const std::string& v) {
         c.augment.noise_sigma = to_double("augment.noise_sigma", v);
         require(c.augment.noise_sigma >= 0.0,
                 "config key 'augment.noise_sigma': must be >= 0");
       },
       [](const RunConfig& c) { return fmt_double(c.augment.noise_sigma); }},
      {"augment.mask_fraction",
       [require](RunConfig& c, const std::string& v) {
         c.augment.mask_fraction = to_double("augment.mask_fraction", v);
         require(c.augment.mask_fraction >= 0.0 && c.augment.mask_fraction < 1.0,
                 "config key 'augment.mask_fraction': must be in [0, 1)");
       },
       [](const RunConfig& c) { return fmt_double(c.augment.mask_fraction); }},
      {"augment.scale_jitter",
       [require](RunConfig& c, const std::string& v) {
         c.augment.scale_jitter = to_double("augment.scale_jitter", v);
         require(c.augment.scale_jitter >= 0.0,
                 "config key 'augment.scale_jitter': must be >= 0");
       },
       [](const RunConfig& c) { return fmt_double(c.augment.scale_jitter); }},

      {"model.encoder_hidden",
       [require](RunConfig& c, const std::string& v) {
         c.model.encoder_hidden = static_cast<int>(to_long("model.encoder_hidden", v));
         require(c.model.encoder_hidden >= 2,
                 "config key 'model.encoder_hidden': must be >= 2");
       },
       [](const RunConfig& c) { return std::to_string(c.model.encoder_hidden); }},
      {"model.encoder_layers",
       [require](RunConfig& c, const std::string& v) {
         c.model.encoder_layers = static_cast<int>(to_long("model.encoder_layers", v));
         require(c.model.encoder_layers >= 1,
                 "config key 'model.encoder_layers': must be >= 1");
       },
       [](const RunConfig& c) { return std::to_string(c.model.encoder_layers); }},
      {"model.embed_dim",
       [require](RunConfig& c, const std::string& v) {
         c.model.embed_dim = static_cast<int>(to_long("model.embed_dim", v));
         require(c.model.embed_dim >= 2, "config key 'model.embed_dim': must be >= 2");
       },
       [](const RunConfig& c) { return std::to_string(c.model.embed_dim); }},
      {"model.proj_dim",
       [require](RunConfig& c, const std::string& v) {
         c.model.proj_dim = static_cast<int>(to_long("model.proj_dim", v));
         require(c.model.proj_dim >= 2, "config key 'model.proj_dim': must be >= 2");
       },
       [](const RunConfig& c) { return std::to_string(c.model.proj_dim); }},
      {"model.predictor_hidden",
       [require](RunConfig& c, const std::string& v) {
         c.model.predictor_hidden = static_cast<int>(to_long("model.predictor_hidden", v));
         require(c.model.predictor_hidden >= 2,
                 "config key 'model.predictor_hidden': must be >= 2");
       },
       [](const RunConfig& c) { return std::to_string(c.model.predictor_hidden); }},
      {"model.standardize",
       [](RunConfig& c, const std::string& v) {
         c.model.standardize = to_bool("model.standardize", v);
       },
       [](const RunConfig& c) { return c.model.standardize ? "true" : "false"; }},
      {"model.momentum_encoder",
       [](RunConfig& c, const std::string& v) {
         c.model.momentum_encoder = to_bool("model.momentum_encoder", v);
       },
       [](const RunConfig& c) { return c.model.momentum_encoder ? "true" : "false"; }},
      {"model.ema_momentum",
       [require](RunConfig& c, const std::string& v) {
         c.model.ema_momentum = to_double("model.ema_momentum", v);
         require(c.model.ema_momentum >= 0.0 && c.model.ema_momentum < 1.0,
                 "config key 'model.ema_momentum': must be in [0, 1)");
       },
       [](const RunConfig& c) { return fmt_double(c.model.ema_momentum); }},

      {"opt.kind",
       [](RunConfig& c, const std::string& v) {
         opt_kind_from_string(v);  // throws on unknown
         c.opt.kind = v;
       },
       [](const RunConfig& c) { return c.opt.kind; }},
      {"opt.lr",
       [require](RunConfig& c, const std::string& v) {
         c.opt.lr = to_double("opt.lr", v);
         require(c.opt.lr > 0.0, "config key 'opt.lr': must be > 0");
       },
       [](const RunConfig& c) { return fmt_double(c.opt.lr); }},
      {"opt.momentum",
       [require](RunConfig& c, const std::string& v) {
         c.opt.momentum = to_double("opt.momentum", v);
         require(c.opt.momentum >= 0.0 && c.opt.momentum < 1.0,
                 "config key 'opt.momentum': must be in [0, 1)");
       },
       [](const RunConfig& c) { return fmt_double(c.opt.momentum); }},
      {"opt.weight_decay",
       [require](RunConfig& c, const std::string& v) {
         c.opt.weight_decay = to_double("opt.weight_decay", v);
         require(c.opt.weight_decay >= 0.0, "config key 'opt.weight_decay': must be >= 0");
       },
       [](const RunConfig& c) { return fmt_double(c.opt.weight_decay); }},
      {"opt.warmup_epochs",
       [require](RunConfig& c, const std::string& v) {
         c.opt.warmup_epochs = static_cast<int>(to_long("opt.warmup_epochs", v));
         require(c.opt.warmup_epochs >= 0, "config key 'opt.warmup_epochs': must be >= 0");
       },
       [](const RunConfig& c) { return std::to_string(c.opt.warmup_epochs); }},

      {"eval.knn_k",
       [require](RunConfig& c, const std::string& v) {
         c.eval.knn_k = static_cast<int>(to_long("eval.knn_k", v));
         require(c.eval.knn_k >= 1, "config key 'eval.knn_k': must be >= 1");
       },
       [](const RunConfig& c) { return std::to_string(c.eval.knn_k); }},
      {"eval.precision_k",
       [require](RunConfig& c, const std::string& v) {
         c.eval.precision_k = static_cast<int>(to_long("eval.precision_k", v));
         require(c.eval.precision_k >= 1, "config key 'eval.precision_k': must be >= 1");
       },
       [](const RunConfig& c) { return std::to_string(c.eval.precision_k); }},
      {"eval.probe_epochs",
       [require](RunConfig& c, const std::string& v) {
         c.eval.probe_epochs = static_cast<int>(to_long("eval.probe_epochs", v));
         require(c.eval.probe_epochs >= 0, "config key 'eval.probe_epochs': must be >= 0");
       },
       [](const RunConfig& c) { return std::to_string(c.eval.probe_epochs); }},
      {"eval.probe_lr",
       [require](RunConfig& c, const std::string& v) {
         c.eval.probe_lr = to_double("eval.probe_lr", v);
         require(c.eval.probe_lr > 0.0, "config key 'eval.probe_lr': must be > 0");
       },
       [](const RunConfig& c) { return fmt_double(c.eval.probe_lr); }},
      {"eval.test_fraction",
       [require](RunConfig& c, const std::string& v) {
         c.eval.test_fraction = to_double("eval.test_fraction", v);
         require(c.eval.test_fraction > 0.0 && c.eval.test_fraction < 1.0,
                 "config key 'eval.test_fraction': must be in (0, 1)");
       },
       [](const RunConfig& c) { return fmt_double(c.eval.test_fraction); }},

      {"sweep.seed_policy",
       [require](RunConfig& c, const std::string& v) {
         require(v == "shared" || v == "increment",
                 "config key 'sweep.seed_policy': expected shared or increment");
         c.sweep.seed_policy = v;
       },
       [](const RunConfig& c) { return c.sweep.seed_policy; }},
  };
  return keys;
}

}  // namespace cfgdetail

inline bool has_config_key(const std::string& key) {
  for (const auto& h : cfgdetail::key_registry()) {
    if (h.name == key) return true;
  }
  return false;
}

inline void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& h : cfgdetail::key_registry()) {
    if (h.name == key) {
      h.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// Strict parse of the flat `key = value` grammar. `#` starts a comment,
// dotted keys select nested fields, unknown keys and out-of-range values
// are hard errors. A later line overrides an earlier one, which is what
// sweeps append.
inline RunConfig parse_config_text(const std::string& text, const std::string& origin = "") {
  RunConfig cfg;
  cfg.echo = text;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string_view stripped = cfgdetail::trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(origin + "line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + std::string(stripped) + "'");
    }
    const std::string key{cfgdetail::trim(stripped.substr(0, eq))};
    const std::string value{cfgdetail::trim(stripped.substr(eq + 1))};
    if (key.empty()) {
      throw ConfigError(origin + "line " + std::to_string(line_no) + ": empty key");
    }
    set_config_key(cfg, key, value);
  }
  return cfg;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path + ": ");
}

// Canonical text listing every key; parsing it back yields an equal config.
inline std::string emit_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& h : cfgdetail::key_registry()) {
    out << h.name << " = " << h.get(cfg) << "\n";
  }
  return out.str();
}

}  // namespace iccl
