#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "iccl/config.hpp"

using namespace iccl;

TEST_CASE("empty config text gives all defaults") {
  const RunConfig cfg = parse_config_text("");
  CHECK(cfg.seed == 1);
  CHECK(cfg.epochs == 30);
  CHECK(cfg.switch_fraction == 0.5);
  CHECK(cfg.lambda_r == 1.0);
  CHECK(cfg.tau.tau1 == 0.1);
  CHECK(cfg.tau.tau2 == 0.07);
  CHECK(cfg.tau.adaptive_tau1 == AdaptiveTau1::off);
  CHECK(cfg.labels.kind == "softmax");
  CHECK(cfg.symmetrize);
  CHECK(cfg.model.momentum_encoder);
  CHECK(cfg.model.ema_momentum == 0.99);
}

TEST_CASE("keys, comments and dotted paths parse") {
  const std::string text =
      "# experiment\n"
      "seed = 7\n"
      "epochs= 12  # short run\n"
      "tau.tau2 = 0.05\n"
      "labels.kind = sinkhorn\n"
      "model.standardize = false\n"
      "\n"
      "data.spread = 4.5\n";
  const RunConfig cfg = parse_config_text(text);
  CHECK(cfg.seed == 7);
  CHECK(cfg.epochs == 12);
  CHECK(cfg.tau.tau2 == 0.05);
  CHECK(cfg.labels.kind == "sinkhorn");
  CHECK(!cfg.model.standardize);
  CHECK(cfg.data.spread == 4.5);
  CHECK(cfg.echo == text);
}

TEST_CASE("unknown keys are hard errors naming the key") {
  try {
    parse_config_text("tua.tau1 = 0.1\n");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("tua.tau1") != std::string::npos);
  }
}

TEST_CASE("range violations name the key") {
  for (const std::string line : {"tau.tau2 = -1", "tau.tau1 = 0", "lambda_r = -0.5",
                                 "switch_fraction = 1.5", "labels.center_momentum = 1.0",
                                 "augment.mask_fraction = 1.0"}) {
    try {
      parse_config_text(line + "\n");
      FAIL("expected a config error for: ", line);
    } catch (const ConfigError& e) {
      const std::string key = line.substr(0, line.find(' '));
      CHECK(std::string(e.what()).find(key) != std::string::npos);
    }
  }
}

TEST_CASE("type errors are rejected") {
  CHECK_THROWS_AS(parse_config_text("epochs = soon\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("symmetrize = yes\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("this is not a key value line\n"), ConfigError);
}

TEST_CASE("later lines override earlier ones") {
  const RunConfig cfg = parse_config_text("seed = 1\nseed = 9\n");
  CHECK(cfg.seed == 9);
}

TEST_CASE("emit and re-parse round trips") {
  RunConfig cfg = parse_config_text("");
  cfg.tau.tau2 = 0.05;
  cfg.labels.kind = "centering";
  cfg.lambda_r = 2.5;
  const std::string text = emit_config(cfg);
  const RunConfig back = parse_config_text(text);
  CHECK(emit_config(back) == text);
}

TEST_CASE("parse_config reads files and reports missing ones") {
  const auto path = std::filesystem::temp_directory_path() / "iccl_cfg_test.conf";
  {
    std::ofstream f(path);
    f << "epochs = 3\nseed = 42\n";
  }
  const RunConfig cfg = parse_config(path.string());
  CHECK(cfg.epochs == 3);
  CHECK(cfg.seed == 42);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(parse_config(path.string()), ConfigError);
}

TEST_CASE("set_config_key drives sweep overrides") {
  RunConfig cfg = parse_config_text("");
  set_config_key(cfg, "lambda_r", "7.5");
  CHECK(cfg.lambda_r == 7.5);
  CHECK(has_config_key("tau.tau2"));
  CHECK(!has_config_key("nope"));
  CHECK_THROWS_AS(set_config_key(cfg, "nope", "1"), ConfigError);
}
