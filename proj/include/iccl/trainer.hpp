#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iccl/config.hpp"
#include "iccl/data.hpp"
#include "iccl/errors.hpp"
#include "iccl/gradcheck.hpp"
#include "iccl/labels.hpp"
#include "iccl/losses.hpp"
#include "iccl/metrics.hpp"
#include "iccl/model.hpp"
#include "iccl/numkern.hpp"
#include "iccl/rng.hpp"

namespace iccl {

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss_similarity = 0.0;
  double loss_iccl_minus_logc = 0.0;
  double loss_final = 0.0;
  double mean_pz2_norm = 0.0;
  double embedding_std = 0.0;
  double effective_rank = 0.0;
};

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss_similarity = 0.0;
  double loss_iccl_minus_logc = 0.0;
  double loss_final = 0.0;
  double mean_pz2_norm = 0.0;
};

struct TauCheckpoint {
  int epoch = 0;
  double tau2 = 0.0;
  double mean_pz2_norm = 0.0;
};

struct RunReport {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;  // only with per-step logging
  std::vector<TauCheckpoint> tau_checkpoints;
  EvalReport final_eval;
  CollapseDiag initial_diag;  // projector-space diagnostics before training
  int proj_dim = 0;
  int embed_dim = 0;
  std::string config_echo;
  double wall_seconds = 0.0;
};

// The epoch at which training switches from the similarity loss to the
// combined loss: similarity is used exactly for epochs e < this value.
inline int switch_epoch(const RunConfig& cfg) {
  return static_cast<int>(std::floor(cfg.switch_fraction * cfg.epochs));
}

namespace traindetail {

struct Branches {
  MlpNetwork encoder;
  MlpNetwork projector;
  MlpNetwork predictor;
};

inline Branches build_branches(const RunConfig& cfg, Rng& rng) {
  const auto h = static_cast<std::size_t>(cfg.model.encoder_hidden);
  const auto e = static_cast<std::size_t>(cfg.model.embed_dim);
  const auto c = static_cast<std::size_t>(cfg.model.proj_dim);
  const auto ph = static_cast<std::size_t>(cfg.model.predictor_hidden);

  std::vector<std::size_t> enc_dims{static_cast<std::size_t>(cfg.data.dim)};
  for (int l = 1; l < cfg.model.encoder_layers; ++l) enc_dims.push_back(h);
  enc_dims.push_back(e);
  std::vector<Activation> enc_acts(enc_dims.size() - 1, Activation::relu);
  std::vector<bool> enc_std(enc_dims.size() - 1, false);

  Branches b;
  b.encoder = make_mlp(enc_dims, enc_acts, enc_std, rng);
  b.projector = make_mlp({e, e, c}, {Activation::relu, Activation::identity},
                         {cfg.model.standardize, false}, rng);
  b.predictor = make_mlp({c, ph, c}, {Activation::relu, Activation::identity},
                         {false, false}, rng);
  return b;
}

inline Batch rows_of(const Mat& m) {
  Batch out(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) out[r] = m.row_vec(r);
  return out;
}

inline double total_grad_norm(const std::vector<const MlpGrads*>& all) {
  double s = 0.0;
  for (const auto* g : all) {
    for (const auto& m : g->w) s += norm_sq(m.a);
    for (const auto& v : g->b) s += norm_sq(v);
  }
  return std::sqrt(s);
}

inline LabeledDataset build_dataset(const RunConfig& cfg) {
  if (cfg.data.kind == "file") {
    if (cfg.data.path.empty()) throw ConfigError("data.kind = file requires data.path");
    LabeledDataset ds = load_vector_dataset(cfg.data.path);
    if (ds.dim() != static_cast<std::size_t>(cfg.data.dim)) {
      throw ConfigError("dataset dim " + std::to_string(ds.dim()) +
                        " does not match data.dim " + std::to_string(cfg.data.dim));
    }
    return ds;
  }
  return make_blobs(cfg.data.classes, cfg.data.dim, cfg.data.per_class, cfg.data.spread,
                    cfg.data.sigma, cfg.seed);
}

}  // namespace traindetail

inline RunReport run_experiment(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.tau.validate();
  cfg.augment.validate();

  const LabeledDataset ds = traindetail::build_dataset(cfg);
  const std::size_t n = ds.size();

  Rng init_rng(derive_seed(cfg.seed, 0x6d6f646c));   // model init stream
  Rng train_rng(derive_seed(cfg.seed, 0x747261696e));  // shuffle + augmentation stream

  traindetail::Branches online = traindetail::build_branches(cfg, init_rng);
  traindetail::Branches target = online;  // target starts as a copy

  const OptKind opt_kind = opt_kind_from_string(cfg.opt.kind);
  OptimizerState opt_enc = OptimizerState::make(opt_kind, cfg.opt.lr, cfg.opt.momentum,
                                                cfg.opt.weight_decay, online.encoder);
  OptimizerState opt_proj = OptimizerState::make(opt_kind, cfg.opt.lr, cfg.opt.momentum,
                                                 cfg.opt.weight_decay, online.projector);
  OptimizerState opt_pred = OptimizerState::make(opt_kind, cfg.opt.lr, cfg.opt.momentum,
                                                 cfg.opt.weight_decay, online.predictor);

  PseudoLabelGenerator gen;
  gen.kind = label_kind_from_string(cfg.labels.kind);
  gen.tau2 = cfg.tau.tau2;
  gen.sinkhorn_iters = cfg.labels.sinkhorn_iters;
  gen.center_momentum = cfg.labels.center_momentum;

  const int steps_per_epoch =
      std::max(1, static_cast<int>(n) / std::min<int>(cfg.batch_size, static_cast<int>(n)));
  const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;
  const long warmup_steps = static_cast<long>(cfg.opt.warmup_epochs) * steps_per_epoch;
  const int switch_at = switch_epoch(cfg);
  const double log_c = std::log(static_cast<double>(cfg.model.proj_dim));

  RunReport report;
  report.config_echo = cfg.echo;
  report.proj_dim = cfg.model.proj_dim;
  report.embed_dim = cfg.model.embed_dim;

  auto target_features = [&](const Mat& x) {
    const traindetail::Branches& t = cfg.model.momentum_encoder ? target : online;
    return mlp_forward(t.projector, mlp_forward(t.encoder, x));
  };
  auto projector_features = [&](const Mat& x) {
    return mlp_forward(online.projector, mlp_forward(online.encoder, x));
  };

  report.initial_diag = collapse_diagnostics(projector_features(ds.samples));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  long global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool similarity_phase = epoch < switch_at;
    train_rng.shuffle(order);

    const std::size_t batch = std::min<std::size_t>(cfg.batch_size, n);
    double ep_lr = 0.0, ep_sim = 0.0, ep_iccl = 0.0, ep_final = 0.0, ep_pz2 = 0.0;

    for (int s = 0; s < steps_per_epoch; ++s, ++global_step) {
      Mat v1(batch, ds.dim()), v2(batch, ds.dim());
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t row = order[s * batch + i];
        auto [a, b] = two_views(ds.samples.row(row), cfg.augment, train_rng);
        for (std::size_t d = 0; d < ds.dim(); ++d) {
          v1.at(i, d) = a[d];
          v2.at(i, d) = b[d];
        }
      }

      const double lr = cosine_lr(global_step, total_steps, cfg.opt.lr, warmup_steps);

      MlpGrads g_enc = make_grads_like(online.encoder);
      MlpGrads g_proj = make_grads_like(online.projector);
      MlpGrads g_pred = make_grads_like(online.predictor);

      double st_sim = 0.0, st_iccl = 0.0, st_final = 0.0, st_pz2 = 0.0;
      const int directions = cfg.symmetrize ? 2 : 1;
      const double weight = 1.0 / directions;

      for (int d = 0; d < directions; ++d) {
        const Mat& x_online = d == 0 ? v1 : v2;
        const Mat& x_target = d == 0 ? v2 : v1;

        ForwardCache c_enc, c_proj, c_pred;
        const Mat e = mlp_forward(online.encoder, x_online, &c_enc);
        const Mat p = mlp_forward(online.projector, e, &c_proj);
        const Mat q = mlp_forward(online.predictor, p, &c_pred);

        const Mat z = target_features(x_target);  // stop-gradient branch
        if (!all_finite(q.a) || !all_finite(z.a)) {
          throw DivergenceError("training diverged at step " + std::to_string(global_step) +
                                    ": non-finite branch output (lr " + std::to_string(lr) + ")",
                                global_step, lr, 0.0);
        }

        // rows whose relu stack died to an exact zero carry no usable
        // direction; the loss kernels treat them as errors, so the trainer's
        // fallback is to drop them from this step
        std::vector<std::size_t> live;
        live.reserve(batch);
        for (std::size_t i = 0; i < batch; ++i) {
          if (norm(q.row(i)) > 1e-9 && norm(z.row(i)) > 1e-9) live.push_back(i);
        }
        if (live.empty()) {
          throw DivergenceError("training diverged at step " + std::to_string(global_step) +
                                    ": every row in the batch is degenerate",
                                global_step, lr, 0.0);
        }
        const double live_n = static_cast<double>(live.size());

        Batch q_rows(live.size()), z_rows(live.size());
        for (std::size_t i = 0; i < live.size(); ++i) {
          q_rows[i] = q.row_vec(live[i]);
          z_rows[i] = z.row_vec(live[i]);
        }
        const std::vector<ProbDist> targets = generate_targets(gen, z_rows);

        // both loss families are evaluated every step so the similarity /
        // iccl correlation can be read off any run
        double sim_sum = 0.0;
        std::vector<Vec> sim_grads(live.size());
        for (std::size_t i = 0; i < live.size(); ++i) {
          LossResult r = similarity_loss(q_rows[i], z_rows[i]);
          sim_sum += r.value;
          sim_grads[i] = std::move(r.grad_q1);
        }
        const FinalLossResult fin = final_loss(q_rows, targets, cfg.tau, cfg.lambda_r);

        st_sim += weight * sim_sum / live_n;
        st_iccl += weight * (fin.mean_iccl - log_c);
        st_final += weight * fin.summary;
        st_pz2 += weight * track_pz2_norm(z, cfg.tau.tau2);

        Mat gq(batch, q.cols);
        for (std::size_t i = 0; i < live.size(); ++i) {
          for (std::size_t k = 0; k < q.cols; ++k) {
            gq.at(live[i], k) = similarity_phase ? weight * sim_grads[i][k] / live_n
                                                 : weight * fin.grad_q1[i][k];
          }
        }
        const Mat gp = mlp_backward(online.predictor, c_pred, gq, g_pred);
        const Mat ge = mlp_backward(online.projector, c_proj, gp, g_proj);
        mlp_backward(online.encoder, c_enc, ge, g_enc);
      }

      const double phase_loss = similarity_phase ? st_sim : st_final;
      if (!std::isfinite(phase_loss) || !std::isfinite(st_sim) || !std::isfinite(st_final)) {
        throw DivergenceError(
            "training diverged at step " + std::to_string(global_step) + " (lr " +
                std::to_string(lr) + ", grad norm " +
                std::to_string(traindetail::total_grad_norm({&g_enc, &g_proj, &g_pred})) + ")",
            global_step, lr, traindetail::total_grad_norm({&g_enc, &g_proj, &g_pred}));
      }

      try {
        optimizer_step(opt_enc, online.encoder, g_enc, lr);
        optimizer_step(opt_proj, online.projector, g_proj, lr);
        optimizer_step(opt_pred, online.predictor, g_pred, lr);
      } catch (const DivergenceError&) {
        const double gn = traindetail::total_grad_norm({&g_enc, &g_proj, &g_pred});
        throw DivergenceError("training diverged at step " + std::to_string(global_step) +
                                  ": non-finite gradient (lr " + std::to_string(lr) +
                                  ", grad norm " + std::to_string(gn) + ")",
                              global_step, lr, gn);
      }
      if (cfg.model.momentum_encoder) {
        ema_update(target.encoder, online.encoder, cfg.model.ema_momentum);
        ema_update(target.projector, online.projector, cfg.model.ema_momentum);
      }

      ep_lr += lr;
      ep_sim += st_sim;
      ep_iccl += st_iccl;
      ep_final += st_final;
      ep_pz2 += st_pz2;
      if (cfg.per_step_log) {
        report.steps.push_back(
            {global_step, epoch, lr, st_sim, st_iccl, st_final, st_pz2});
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = ep_lr / steps_per_epoch;
    rec.loss_similarity = ep_sim / steps_per_epoch;
    rec.loss_iccl_minus_logc = ep_iccl / steps_per_epoch;
    rec.loss_final = ep_final / steps_per_epoch;
    rec.mean_pz2_norm = ep_pz2 / steps_per_epoch;
    const CollapseDiag diag = collapse_diagnostics(projector_features(ds.samples));
    rec.embedding_std = diag.embedding_std;
    rec.effective_rank = diag.effective_rank;
    report.epochs.push_back(rec);

    if (epoch == 0 || epoch == cfg.epochs / 2 || epoch == cfg.epochs - 1) {
      const Mat z_full = target_features(ds.samples);
      for (const double tau2 : {0.05, 0.07, 0.1}) {
        report.tau_checkpoints.push_back({epoch, tau2, track_pz2_norm(z_full, tau2)});
      }
    }
  }

  // final evaluation on frozen features; retrieval uses the encoder output
  const Mat emb = mlp_forward(online.encoder, ds.samples);
  Rng split_rng(derive_seed(cfg.seed, 0x73706c69));
  std::vector<std::size_t> split_order(n);
  std::iota(split_order.begin(), split_order.end(), 0);
  split_rng.shuffle(split_order);
  const std::size_t test_n =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                   cfg.eval.test_fraction * static_cast<double>(n))));
  const std::size_t train_n = n - test_n;

  Mat train_emb(train_n, emb.cols), test_emb(test_n, emb.cols);
  std::vector<int> train_labels(train_n), test_labels(test_n);
  for (std::size_t i = 0; i < train_n; ++i) {
    const std::size_t r = split_order[i];
    for (std::size_t c = 0; c < emb.cols; ++c) train_emb.at(i, c) = emb.at(r, c);
    train_labels[i] = ds.labels[r];
  }
  for (std::size_t i = 0; i < test_n; ++i) {
    const std::size_t r = split_order[train_n + i];
    for (std::size_t c = 0; c < emb.cols; ++c) test_emb.at(i, c) = emb.at(r, c);
    test_labels[i] = ds.labels[r];
  }

  EvalReport ev;
  ev.k = cfg.eval.precision_k;
  ev.precision_at_k = precision_at_k(emb, ds.labels, cfg.eval.precision_k);
  ev.knn_top1 = knn_classify(train_emb, train_labels, test_emb, test_labels, cfg.eval.knn_k);
  ev.probe_top1 = linear_probe(train_emb, train_labels, test_emb, test_labels,
                               cfg.eval.probe_epochs, cfg.eval.probe_lr);
  ev.embedding_std = collapse_diagnostics(emb).embedding_std;
  ev.mean_pz2_norm = track_pz2_norm(target_features(ds.samples), cfg.tau.tau2);
  report.final_eval = ev;

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

namespace traindetail {

inline std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace traindetail

inline std::string metrics_csv(const RunReport& report) {
  std::ostringstream out;
  out << "epoch,lr,loss_similarity,loss_iccl_minus_logc,loss_final,mean_pz2_norm,"
         "embedding_std,effective_rank\n";
  for (const auto& r : report.epochs) {
    out << r.epoch << ',' << traindetail::fmt(r.lr) << ',' << traindetail::fmt(r.loss_similarity)
        << ',' << traindetail::fmt(r.loss_iccl_minus_logc) << ','
        << traindetail::fmt(r.loss_final) << ',' << traindetail::fmt(r.mean_pz2_norm) << ','
        << traindetail::fmt(r.embedding_std) << ',' << traindetail::fmt(r.effective_rank)
        << '\n';
  }
  return out.str();
}

inline nlohmann::json eval_report_json(const EvalReport& ev) {
  return nlohmann::json{{"precision_at_k", ev.precision_at_k}, {"knn_top1", ev.knn_top1},
                        {"probe_top1", ev.probe_top1},         {"embedding_std", ev.embedding_std},
                        {"mean_pz2_norm", ev.mean_pz2_norm},   {"k", ev.k}};
}

inline std::string eval_report_csv(const EvalReport& ev) {
  std::ostringstream out;
  out << "precision_at_k,knn_top1,probe_top1,embedding_std,mean_pz2_norm,k\n"
      << traindetail::fmt(ev.precision_at_k) << ',' << traindetail::fmt(ev.knn_top1) << ','
      << traindetail::fmt(ev.probe_top1) << ',' << traindetail::fmt(ev.embedding_std) << ','
      << traindetail::fmt(ev.mean_pz2_norm) << ',' << ev.k << '\n';
  return out.str();
}

inline nlohmann::json report_json(const RunReport& report) {
  nlohmann::json j;
  j["epochs"] = nlohmann::json::array();
  for (const auto& r : report.epochs) {
    j["epochs"].push_back({{"epoch", r.epoch},
                           {"lr", r.lr},
                           {"loss_similarity", r.loss_similarity},
                           {"loss_iccl_minus_logc", r.loss_iccl_minus_logc},
                           {"loss_final", r.loss_final},
                           {"mean_pz2_norm", r.mean_pz2_norm},
                           {"embedding_std", r.embedding_std},
                           {"effective_rank", r.effective_rank}});
  }
  j["tau_checkpoints"] = nlohmann::json::array();
  for (const auto& c : report.tau_checkpoints) {
    j["tau_checkpoints"].push_back(
        {{"epoch", c.epoch}, {"tau2", c.tau2}, {"mean_pz2_norm", c.mean_pz2_norm}});
  }
  j["final_eval"] = eval_report_json(report.final_eval);
  j["initial"] = {{"embedding_std", report.initial_diag.embedding_std},
                  {"effective_rank", report.initial_diag.effective_rank}};
  j["proj_dim"] = report.proj_dim;
  j["embed_dim"] = report.embed_dim;
  j["protocol"] = {{"target_features", "projector output of the target branch"},
                   {"retrieval_features", "encoder output, l2-normalized for retrieval"},
                   {"collapse_diagnostics_space", "projector output of the online branch"}};
  j["wall_seconds"] = report.wall_seconds;
  j["config_echo"] = report.config_echo;
  return j;
}

inline void write_report(const RunReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream f(fs::path(out_dir) / "report.json");
    f << report_json(report).dump(2) << "\n";
  }
  {
    std::ofstream f(fs::path(out_dir) / "metrics.csv");
    f << metrics_csv(report);
  }
  {
    std::ofstream f(fs::path(out_dir) / "config.echo", std::ios::binary);
    f << report.config_echo;
  }
  if (!report.steps.empty()) {
    std::ofstream f(fs::path(out_dir) / "steps.csv");
    f << "step,epoch,lr,loss_similarity,loss_iccl_minus_logc,loss_final,mean_pz2_norm\n";
    for (const auto& s : report.steps) {
      f << s.step << ',' << s.epoch << ',' << traindetail::fmt(s.lr) << ','
        << traindetail::fmt(s.loss_similarity) << ','
        << traindetail::fmt(s.loss_iccl_minus_logc) << ',' << traindetail::fmt(s.loss_final)
        << ',' << traindetail::fmt(s.mean_pz2_norm) << '\n';
    }
  }
}

// One run per axis value. Overrides are appended as ordinary config lines
// and re-parsed, so sweep values face exactly the validation a config file
// would. seed_policy increment gives run i seed base_seed + i.
inline std::vector<RunReport> run_sweep(const RunConfig& base, const std::string& axis,
                                        const std::vector<std::string>& values,
                                        const std::string& out_dir) {
  if (!has_config_key(axis)) throw ConfigError("unknown sweep axis '" + axis + "'");
  if (values.empty()) throw ConfigError("sweep needs at least one value");

  std::vector<RunReport> reports;
  std::ostringstream summary;
  summary << "axis,value,seed,precision_at_k,knn_top1,probe_top1,loss_final,"
             "embedding_std,effective_rank\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::string text = base.echo;
    text += "\n" + axis + " = " + values[i] + "\n";
    if (base.sweep.seed_policy == "increment") {
      text += "seed = " + std::to_string(base.seed + i) + "\n";
    }
    RunConfig cfg = parse_config_text(text);
    cfg.output_dir = out_dir;

    RunReport rep = run_experiment(cfg);
    write_report(rep, (std::filesystem::path(out_dir) / (axis + "=" + values[i])).string());

    const EpochRecord& last = rep.epochs.back();
    summary << axis << ',' << values[i] << ',' << cfg.seed << ','
            << traindetail::fmt(rep.final_eval.precision_at_k) << ','
            << traindetail::fmt(rep.final_eval.knn_top1) << ','
            << traindetail::fmt(rep.final_eval.probe_top1) << ','
            << traindetail::fmt(last.loss_final) << ',' << traindetail::fmt(last.embedding_std)
            << ',' << traindetail::fmt(last.effective_rank) << '\n';
    reports.push_back(std::move(rep));
  }
  std::filesystem::create_directories(out_dir);
  std::ofstream f(std::filesystem::path(out_dir) / "sweep_summary.csv");
  f << summary.str();
  std::cout << summary.str();
  return reports;
}

}  // namespace iccl
