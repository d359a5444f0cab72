// Experiment runner for the self-supervised loss library: train/sweep on
// synthetic or file-backed vector datasets, verify gradients, and evaluate
// embedding dumps.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "iccl/config.hpp"
#include "iccl/data.hpp"
#include "iccl/errors.hpp"
#include "iccl/gradcheck.hpp"
#include "iccl/metrics.hpp"
#include "iccl/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDivergence = 2;
constexpr int kExitGradcheck = 3;

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = csv.find(',', start);
    const std::size_t stop = comma == std::string::npos ? csv.size() : comma;
    std::string item = csv.substr(start, stop - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// one row of comma-separated floats per line; '#' lines are comments
iccl::Mat load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw iccl::ConfigError("cannot open embeddings file '" + path + "'");
  std::vector<double> values;
  std::size_t rows = 0, cols = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv(line);
    if (cols == 0) cols = fields.size();
    if (fields.size() != cols) {
      throw iccl::ConfigError("embeddings file line " + std::to_string(line_no) +
                              ": expected " + std::to_string(cols) + " fields");
    }
    for (std::size_t f = 0; f < fields.size(); ++f) {
      values.push_back(iccl::detail::parse_double_field(fields[f], line_no, f + 1));
    }
    ++rows;
  }
  if (rows == 0) throw iccl::ConfigError("embeddings file '" + path + "' is empty");
  iccl::Mat m(rows, cols);
  m.a = std::move(values);
  return m;
}

std::vector<int> load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw iccl::ConfigError("cannot open labels file '" + path + "'");
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    try {
      labels.push_back(std::stoi(line));
    } catch (...) {
      throw iccl::ConfigError("labels file line " + std::to_string(line_no) + ": bad label '" +
                              line + "'");
    }
  }
  if (labels.empty()) throw iccl::ConfigError("labels file '" + path + "' is empty");
  return labels;
}

int cmd_run(const std::string& config_path, const std::string& out_override, bool per_step) {
  iccl::RunConfig cfg = iccl::parse_config(config_path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  cfg.per_step_log = per_step;

  const iccl::RunReport report = iccl::run_experiment(cfg);
  iccl::write_report(report, cfg.output_dir);

  const auto& ev = report.final_eval;
  std::cout << "run complete: " << report.epochs.size() << " epochs in " << report.wall_seconds
            << " s\n"
            << "  precision@" << ev.k << " " << ev.precision_at_k << ", knn " << ev.knn_top1
            << ", probe " << ev.probe_top1 << "\n"
            << "  report in " << cfg.output_dir << "\n";
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& axis,
              const std::string& values_csv, const std::string& out_override) {
  iccl::RunConfig cfg = iccl::parse_config(config_path);
  if (!out_override.empty()) cfg.output_dir = out_override;
  const auto values = split_csv(values_csv);
  iccl::run_sweep(cfg, axis, values, cfg.output_dir);
  return kExitOk;
}

int cmd_gradcheck(const std::string& loss, const std::string& dims_csv, int trials,
                  std::uint64_t seed, bool inject_error) {
  iccl::GradCheckOptions opt;
  opt.trials = trials;
  opt.seed = seed;
  opt.inject_error = inject_error;
  if (!dims_csv.empty()) {
    opt.dims.clear();
    for (const auto& d : split_csv(dims_csv)) opt.dims.push_back(std::stoi(d));
  }
  std::vector<std::string> losses;
  if (loss.empty()) {
    losses = iccl::gradcheck_loss_names();
  } else {
    const auto& known = iccl::gradcheck_loss_names();
    if (std::find(known.begin(), known.end(), loss) == known.end()) {
      throw iccl::ConfigError("unknown loss '" + loss + "' for gradcheck");
    }
    losses = {loss};
  }

  bool ok = true;
  for (const auto& c : iccl::run_gradcheck(losses, opt)) {
    std::printf("gradcheck %-14s C=%-4d max_rel_err=%.3e  %s\n", c.loss.c_str(), c.dim,
                c.max_rel_err, c.pass ? "ok" : "FAIL");
    ok = ok && c.pass;
  }

  if (loss.empty()) {
    const iccl::IdentitySweep sweep = iccl::run_identity_sweep(1000, seed);
    const double worst = std::max(
        {sweep.max_rel_dev_similarity, sweep.max_rel_dev_mce, sweep.max_rel_dev_iccl});
    const bool identities_ok = worst < 1e-8 && sweep.bound_violations == 0;
    std::printf("gradcheck identities   max_rel_dev=%.3e bound_violations=%d  %s\n", worst,
                sweep.bound_violations, identities_ok ? "ok" : "FAIL");
    const int prop1_bad = iccl::run_prop1_sweep(10000, seed);
    std::printf("gradcheck prop1        violations=%d  %s\n", prop1_bad,
                prop1_bad == 0 ? "ok" : "FAIL");
    ok = ok && identities_ok && prop1_bad == 0;
  }
  return ok ? kExitOk : kExitGradcheck;
}

int cmd_eval(const std::string& emb_path, const std::string& labels_path, int k) {
  const iccl::Mat emb = load_embeddings(emb_path);
  const std::vector<int> labels = load_labels(labels_path);
  if (emb.rows != labels.size()) {
    throw iccl::ConfigError("embeddings and labels disagree on sample count");
  }
  if (k < 1 || static_cast<std::size_t>(k) >= emb.rows) {
    throw iccl::ConfigError("k must be in [1, N)");
  }

  // deterministic 80/20 split for the fit-and-score metrics
  iccl::Rng split_rng(iccl::derive_seed(0, 0x73706c69));
  std::vector<std::size_t> order(emb.rows);
  std::iota(order.begin(), order.end(), 0);
  split_rng.shuffle(order);
  const std::size_t test_n = std::max<std::size_t>(1, emb.rows / 5);
  const std::size_t train_n = emb.rows - test_n;
  iccl::Mat train(train_n, emb.cols), test(test_n, emb.cols);
  std::vector<int> ltrain(train_n), ltest(test_n);
  for (std::size_t i = 0; i < train_n; ++i) {
    for (std::size_t c = 0; c < emb.cols; ++c) train.at(i, c) = emb.at(order[i], c);
    ltrain[i] = labels[order[i]];
  }
  for (std::size_t i = 0; i < test_n; ++i) {
    for (std::size_t c = 0; c < emb.cols; ++c) test.at(i, c) = emb.at(order[train_n + i], c);
    ltest[i] = labels[order[train_n + i]];
  }

  iccl::EvalReport ev;
  ev.k = k;
  ev.precision_at_k = iccl::precision_at_k(emb, labels, k);
  ev.knn_top1 = iccl::knn_classify(train, ltrain, test, ltest, k);
  ev.probe_top1 = iccl::linear_probe(train, ltrain, test, ltest, 100, 0.1);
  ev.embedding_std = iccl::collapse_diagnostics(emb).embedding_std;
  ev.mean_pz2_norm = iccl::track_pz2_norm(emb, 0.07);

  std::cout << iccl::eval_report_json(ev).dump(2) << "\n" << iccl::eval_report_csv(ev);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised loss experiments on vector data"};
  app.require_subcommand(1);

  std::string config_path, out_dir, axis, values_csv;
  bool per_step = false;
  auto* run = app.add_subcommand("run", "train one configuration and write reports");
  run->add_option("--config", config_path, "config file (key = value lines)")->required();
  run->add_option("--out", out_dir, "output directory (overrides output_dir)");
  run->add_flag("--per-step-log", per_step, "also write per-step metrics to steps.csv");

  auto* sweep = app.add_subcommand("sweep", "run one configuration across an axis of values");
  sweep->add_option("--config", config_path, "base config file")->required();
  sweep->add_option("--axis", axis, "config key to vary")->required();
  sweep->add_option("--values", values_csv, "comma-separated values")->required();
  sweep->add_option("--out", out_dir, "output directory (overrides output_dir)");

  std::string loss, dims_csv;
  int trials = 100;
  std::uint64_t seed = 20240705;
  bool inject_error = false;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference and bound suites; exit 3 on violation");
  gradcheck->add_option("--loss", loss, "check one loss only (default: all)");
  gradcheck->add_option("--dims", dims_csv, "comma-separated dimensions (default: 8,64,256)");
  gradcheck->add_option("--trials", trials, "random inputs per loss/dimension");
  gradcheck->add_option("--seed", seed, "rng seed");
  gradcheck->add_flag("--inject-error", inject_error,
                      "corrupt the analytic gradients; the check must then fail (self-test)");

  std::string emb_path, labels_path;
  int k = 5;
  auto* eval = app.add_subcommand("eval", "score an embedding dump against labels");
  eval->add_option("--embeddings", emb_path, "csv of one embedding per line")->required();
  eval->add_option("--labels", labels_path, "one integer label per line")->required();
  eval->add_option("-k", k, "neighborhood size for precision@k and kNN");

  try {
    app.parse(argc, argv);
    if (run->parsed()) return cmd_run(config_path, out_dir, per_step);
    if (sweep->parsed()) return cmd_sweep(config_path, axis, values_csv, out_dir);
    if (gradcheck->parsed()) return cmd_gradcheck(loss, dims_csv, trials, seed, inject_error);
    if (eval->parsed()) return cmd_eval(emb_path, labels_path, k);
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  } catch (const iccl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const iccl::DivergenceError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
