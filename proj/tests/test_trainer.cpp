#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "iccl/metrics.hpp"
#include "iccl/trainer.hpp"

using namespace iccl;

namespace {

// small, fast configuration for unit-level runs
RunConfig tiny_config() {
  RunConfig cfg = parse_config_text(
      "epochs = 6\n"
      "batch_size = 64\n"
      "data.classes = 4\n"
      "data.dim = 16\n"
      "data.per_class = 60\n"
      "model.encoder_hidden = 32\n"
      "model.embed_dim = 32\n"
      "model.proj_dim = 8\n"
      "model.predictor_hidden = 8\n"
      "eval.probe_epochs = 20\n");
  return cfg;
}

}  // namespace

TEST_CASE("switch epoch uses the exact floor rule") {
  RunConfig cfg;
  cfg.epochs = 5;
  cfg.switch_fraction = 0.5;
  CHECK(switch_epoch(cfg) == 2);
  cfg.epochs = 4;
  CHECK(switch_epoch(cfg) == 2);
  cfg.switch_fraction = 1.0;
  CHECK(switch_epoch(cfg) == 4);
  cfg.switch_fraction = 0.0;
  CHECK(switch_epoch(cfg) == 0);
  cfg.epochs = 30;
  cfg.switch_fraction = 0.5;
  CHECK(switch_epoch(cfg) == 15);
}

TEST_CASE("runs are bitwise deterministic") {
  const RunConfig cfg = tiny_config();
  const RunReport a = run_experiment(cfg);
  const RunReport b = run_experiment(cfg);
  CHECK(metrics_csv(a) == metrics_csv(b));
  CHECK(a.final_eval.precision_at_k == b.final_eval.precision_at_k);
  CHECK(a.final_eval.knn_top1 == b.final_eval.knn_top1);
  CHECK(a.final_eval.probe_top1 == b.final_eval.probe_top1);
}

TEST_CASE("different seeds change the trajectory") {
  RunConfig cfg = tiny_config();
  const RunReport a = run_experiment(cfg);
  cfg = parse_config_text(cfg.echo + "seed = 2\n");
  const RunReport b = run_experiment(cfg);
  CHECK(metrics_csv(a) != metrics_csv(b));
}

TEST_CASE("report structure is complete") {
  RunConfig cfg = tiny_config();
  cfg.per_step_log = true;
  const RunReport rep = run_experiment(cfg);
  REQUIRE(rep.epochs.size() == 6);
  for (std::size_t i = 0; i < rep.epochs.size(); ++i) {
    CHECK(rep.epochs[i].epoch == static_cast<int>(i));
    CHECK(std::isfinite(rep.epochs[i].loss_similarity));
    CHECK(std::isfinite(rep.epochs[i].loss_iccl_minus_logc));
    CHECK(std::isfinite(rep.epochs[i].loss_final));
    CHECK(rep.epochs[i].mean_pz2_norm >= 1.0 / std::sqrt(8.0) - 1e-9);
    CHECK(rep.epochs[i].mean_pz2_norm <= 1.0 + 1e-9);
  }
  CHECK(!rep.steps.empty());
  CHECK(rep.tau_checkpoints.size() == 9);  // 3 epochs x 3 temperatures
  CHECK(rep.final_eval.precision_at_k > 0.0);
  CHECK(rep.config_echo == cfg.echo);
  CHECK(rep.proj_dim == 8);
}

TEST_CASE("degenerate schedules run both pure phases") {
  RunConfig cfg = tiny_config();
  cfg = parse_config_text(cfg.echo + "switch_fraction = 1\n");
  const RunReport sim_only = run_experiment(cfg);
  CHECK(sim_only.epochs.back().loss_similarity < sim_only.epochs.front().loss_similarity);

  cfg = parse_config_text(cfg.echo + "switch_fraction = 0\n");
  const RunReport iccl_only = run_experiment(cfg);
  CHECK(iccl_only.epochs.back().loss_final < iccl_only.epochs.front().loss_final);
}

TEST_CASE("write_report emits the documented artifacts") {
  namespace fs = std::filesystem;
  RunConfig cfg = tiny_config();
  cfg.per_step_log = true;
  const RunReport rep = run_experiment(cfg);
  const fs::path dir = fs::temp_directory_path() / "iccl_trainer_test_out";
  fs::remove_all(dir);
  write_report(rep, dir.string());
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "config.echo"));
  CHECK(fs::exists(dir / "steps.csv"));

  // echo is byte-identical to the parsed input
  std::ifstream echo(dir / "config.echo", std::ios::binary);
  std::stringstream buf;
  buf << echo.rdbuf();
  CHECK(buf.str() == cfg.echo);

  std::ifstream csv(dir / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header ==
        "epoch,lr,loss_similarity,loss_iccl_minus_logc,loss_final,mean_pz2_norm,"
        "embedding_std,effective_rank");
  fs::remove_all(dir);
}

TEST_CASE("divergent settings abort with a diagnostic") {
  // an absurd learning rate overflows the weights within a step or two;
  // the runner must fail loudly instead of skipping the step
  RunConfig cfg = tiny_config();
  cfg = parse_config_text(cfg.echo + "opt.lr = 1e200\nopt.kind = sgd\nepochs = 3\n");
  try {
    run_experiment(cfg);
    FAIL("expected a divergence error");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
    CHECK(e.step >= 0);
  }
}

TEST_CASE("sweep runs every value and writes a summary") {
  namespace fs = std::filesystem;
  RunConfig cfg = tiny_config();
  cfg = parse_config_text(cfg.echo + "epochs = 2\nsweep.seed_policy = increment\n");
  const fs::path dir = fs::temp_directory_path() / "iccl_sweep_test_out";
  fs::remove_all(dir);
  const auto reports = run_sweep(cfg, "lambda_r", {"0", "1"}, dir.string());
  REQUIRE(reports.size() == 2);
  CHECK(fs::exists(dir / "sweep_summary.csv"));
  CHECK(fs::exists(dir / "lambda_r=0" / "report.json"));
  CHECK(fs::exists(dir / "lambda_r=1" / "metrics.csv"));
  CHECK_THROWS_AS(run_sweep(cfg, "bogus_axis", {"1"}, dir.string()), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("pure similarity training still logs a correlated iccl series") {
  RunConfig cfg = parse_config_text(tiny_config().echo +
                                    "switch_fraction = 1\n"
                                    "epochs = 10\n");
  const RunReport rep = run_experiment(cfg);
  Vec sim, iccl;
  for (const auto& r : rep.epochs) {
    sim.push_back(r.loss_similarity);
    iccl.push_back(r.loss_iccl_minus_logc);
  }
  CHECK(pearson_correlation(sim, iccl) > 0.9);
}
