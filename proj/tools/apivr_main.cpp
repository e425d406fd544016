// Command-line front end: gen / train / eval / retrieve / gradcheck.
// Exit codes: 0 success, 2 configuration error, 3 data/IO error,
// 4 numerical failure, 1 anything else.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "apivr/data.hpp"
#include "apivr/losses.hpp"
#include "apivr/model.hpp"
#include "apivr/retrieval.hpp"
#include "apivr/run_config.hpp"
#include "apivr/training.hpp"

namespace fs = std::filesystem;
using namespace apivr;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("APIVR_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) return t;
  }
  return 1;
}

struct AblationFlags {
  bool wo_tl = false, wo_al = false, wo_cl = false;
  bool wo_ga = false, wo_gmil = false, wo_graph = false;

  void add_to(CLI::App* cmd) {
    cmd->add_flag("--wo-tl", wo_tl, "drop the triplet loss term");
    cmd->add_flag("--wo-al", wo_al, "drop the adversarial loss and discriminator updates");
    cmd->add_flag("--wo-cl", wo_cl, "drop the classification loss term");
    cmd->add_flag("--wo-ga", wo_ga, "plain ||ubar - Z||^2 instead of the subspace distance");
    cmd->add_flag("--wo-gmil", wo_gmil, "uniform proposal weights and intact bags");
    cmd->add_flag("--wo-graph", wo_graph, "attention without graph smoothing");
  }

  void apply(TrainConfig& cfg) const {
    cfg.wo_tl |= wo_tl;
    cfg.wo_al |= wo_al;
    cfg.wo_cl |= wo_cl;
    cfg.wo_ga |= wo_ga;
    cfg.wo_gmil |= wo_gmil;
    cfg.wo_graph |= wo_graph;
  }
};

void check_model_matches_dataset(const ModelState& model, const PairedDataset& ds) {
  const ModelDims d = dims_of(model);
  if (d.d1 != ds.d1 || d.d2 != ds.d2 || d.C != ds.C) {
    throw DataError("checkpoint dims (d1=" + std::to_string(d.d1) + ", d2=" +
                    std::to_string(d.d2) + ", C=" + std::to_string(d.C) +
                    ") do not match dataset (d1=" + std::to_string(ds.d1) +
                    ", d2=" + std::to_string(ds.d2) + ", C=" +
                    std::to_string(ds.C) + ")");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"APIVR: image-to-video retrieval over bags of activity proposals"};
  app.require_subcommand(1);
  int threads_flag = 0;
  app.add_option("--threads", threads_flag,
                 "worker thread cap (default: APIVR_THREADS env or 1)");

  // --- gen ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--config", gen_config, "run config JSON");
  gen->add_option("--out", gen_out, "output directory")->required();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "override synthetic seed");

  // --- train ---------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  std::string train_config, train_data, train_out, train_preset, train_activation;
  TrainConfig flag_cfg;  // storage for numeric overrides
  AblationFlags train_ablate;
  train_cmd->add_option("--config", train_config, "run config JSON");
  train_cmd->add_option("--data", train_data, "dataset manifest");
  train_cmd->add_option("--out", train_out, "output directory");
  auto* o_seed = train_cmd->add_option("--seed", flag_cfg.seed);
  auto* o_outer = train_cmd->add_option("--outer-iterations", flag_cfg.outer_iterations);
  auto* o_alpha = train_cmd->add_option("--alpha", flag_cfg.alpha);
  auto* o_beta = train_cmd->add_option("--beta", flag_cfg.beta);
  auto* o_margin = train_cmd->add_option("--margin", flag_cfg.margin);
  auto* o_k = train_cmd->add_option("--k", flag_cfg.k);
  auto* o_b = train_cmd->add_option("--b", flag_cfg.b);
  auto* o_r = train_cmd->add_option("--r", flag_cfg.r);
  auto* o_rp = train_cmd->add_option("--r-prime", flag_cfg.r_prime);
  auto* o_bs = train_cmd->add_option("--batch-size", flag_cfg.batch_size);
  auto* o_gs = train_cmd->add_option("--generator-steps", flag_cfg.generator_steps);
  auto* o_lr = train_cmd->add_option("--learning-rate", flag_cfg.learning_rate);
  auto* o_ridge = train_cmd->add_option("--ridge", flag_cfg.ridge);
  auto* o_preset = train_cmd->add_option("--preset", train_preset, "main|supplementary");
  auto* o_reuse = train_cmd->add_flag("--reuse-generator-batch",
                                      flag_cfg.reuse_generator_batch,
                                      "discriminator reuses the last generator batch");
  train_ablate.add_to(train_cmd);

  // --- eval ----------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "evaluate mAP@K on the test split");
  std::string eval_config, eval_checkpoint, eval_data;
  std::vector<int> eval_ks{10, 20, 50, 100};
  AblationFlags eval_ablate;
  eval_cmd->add_option("--config", eval_config, "run config JSON (activation, ablations)");
  eval_cmd->add_option("--checkpoint", eval_checkpoint)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--k", eval_ks, "K values")->delimiter(',');
  eval_ablate.add_to(eval_cmd);

  // --- retrieve --------------------------------------------------------------
  auto* retr_cmd = app.add_subcommand("retrieve", "export ranked results per query");
  std::string retr_config, retr_checkpoint, retr_data, retr_out;
  int retr_k = 10;
  AblationFlags retr_ablate;
  retr_cmd->add_option("--config", retr_config, "run config JSON");
  retr_cmd->add_option("--checkpoint", retr_checkpoint)->required();
  retr_cmd->add_option("--data", retr_data)->required();
  retr_cmd->add_option("--out", retr_out, "results file")->required();
  retr_cmd->add_option("--k", retr_k, "K for the AP column");
  retr_ablate.add_to(retr_cmd);

  // --- gradcheck -------------------------------------------------------------
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  std::string grad_config;
  int grad_budget = 250;
  bool grad_corrupt = false;
  grad_cmd->add_option("--config", grad_config, "run config JSON");
  grad_cmd->add_option("--max-coords", grad_budget, "coordinate budget per group");
  grad_cmd->add_flag("--corrupt-gradient", grad_corrupt,
                     "test fixture: corrupt one analytic gradient")
      ->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const int threads = resolve_threads(threads_flag);
  try {
    if (gen->parsed()) {
      RunConfig rc = gen_config.empty() ? RunConfig{} : load_run_config(gen_config);
      if (gen_seed_opt->count()) rc.synthetic.seed = gen_seed;
      const PairedDataset ds = generate_synthetic(rc.synthetic);
      const std::string manifest = save_dataset(ds, gen_out);
      std::cout << manifest << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      RunConfig rc = train_config.empty() ? RunConfig{} : load_run_config(train_config);
      TrainConfig cfg = rc.train;
      if (o_preset->count()) {
        cfg.loss_preset = train_preset;
        apply_loss_preset(cfg);
      }
      if (o_seed->count()) cfg.seed = flag_cfg.seed;
      if (o_outer->count()) cfg.outer_iterations = flag_cfg.outer_iterations;
      if (o_alpha->count()) cfg.alpha = flag_cfg.alpha;
      if (o_beta->count()) cfg.beta = flag_cfg.beta;
      if (o_margin->count()) cfg.margin = flag_cfg.margin;
      if (o_k->count()) cfg.k = flag_cfg.k;
      if (o_b->count()) cfg.b = flag_cfg.b;
      if (o_r->count()) cfg.r = flag_cfg.r;
      if (o_rp->count()) cfg.r_prime = flag_cfg.r_prime;
      if (o_bs->count()) cfg.batch_size = flag_cfg.batch_size;
      if (o_gs->count()) cfg.generator_steps = flag_cfg.generator_steps;
      if (o_lr->count()) cfg.learning_rate = flag_cfg.learning_rate;
      if (o_ridge->count()) cfg.ridge = flag_cfg.ridge;
      if (o_reuse->count()) cfg.reuse_generator_batch = flag_cfg.reuse_generator_batch;
      train_ablate.apply(cfg);
      validate_config(cfg);

      const std::string data_path = train_data.empty() ? rc.data_path : train_data;
      const std::string out_dir = train_out.empty() ? rc.out_path : train_out;
      if (data_path.empty()) throw ConfigError("train: --data (or paths.data) is required");
      if (out_dir.empty()) throw ConfigError("train: --out (or paths.out) is required");

      const PairedDataset ds = load_dataset(data_path);
      fs::create_directories(out_dir);
      const std::string log_path = (fs::path(out_dir) / "train_log.txt").string();
      TrainLog log;
      ModelState model;
      try {
        model = train(ds, cfg, log);
      } catch (const NonFiniteLoss& e) {
        write_train_log(log, log_path, std::string("# aborted: ") + e.what() + "\n");
        std::cerr << "train aborted, partial log written to " << log_path << "\n";
        throw;
      }
      const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.apvr").string();
      save_checkpoint(model, ckpt_path);

      std::string footer;
      if (!ds.test_indices().empty()) {
        const double map10 = evaluate_test_map(ds, model,
                                               weight_mode(loss_config(cfg)), 10,
                                               threads);
        footer = "# final_test_map@10 " + fmt(map10) + "\n";
        std::cout << "final test mAP@10 = " << fmt(map10) << "\n";
      }
      write_train_log(log, log_path, footer);
      std::cout << "checkpoint: " << ckpt_path << "\n";
      std::cout << "train log: " << log_path << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      RunConfig rc = eval_config.empty() ? RunConfig{} : load_run_config(eval_config);
      TrainConfig cfg = rc.train;
      eval_ablate.apply(cfg);
      const PairedDataset ds = load_dataset(eval_data);
      const ModelState model = load_checkpoint(eval_checkpoint, cfg.hidden_activation);
      check_model_matches_dataset(model, ds);
      const auto results =
          rank_test_queries(ds, model, weight_mode(loss_config(cfg)), threads);
      const int gallery = static_cast<int>(results.size());
      for (int k : eval_ks) {
        int kk = k;
        if (k > gallery) {
          kk = gallery;
          std::cerr << "warning: K=" << k << " clipped to gallery size " << gallery
                    << "\n";
        }
        std::cout << "mAP@" << k << " = " << fmt(map_at_k(results, kk)) << "\n";
      }
      return 0;
    }

    if (retr_cmd->parsed()) {
      RunConfig rc = retr_config.empty() ? RunConfig{} : load_run_config(retr_config);
      TrainConfig cfg = rc.train;
      retr_ablate.apply(cfg);
      const PairedDataset ds = load_dataset(retr_data);
      const ModelState model = load_checkpoint(retr_checkpoint, cfg.hidden_activation);
      check_model_matches_dataset(model, ds);
      const auto results =
          rank_test_queries(ds, model, weight_mode(loss_config(cfg)), threads);
      const int k = std::min(retr_k, static_cast<int>(results.size()));
      std::ofstream out(retr_out, std::ios::binary);
      if (!out) throw DataError("retrieve: cannot write " + retr_out);
      out << format_results(results, k);
      out.close();
      if (!out) throw DataError("retrieve: write failed for " + retr_out);
      std::cout << "results: " << retr_out << "\n";
      return 0;
    }

    if (grad_cmd->parsed()) {
      SyntheticConfig sc;
      TrainConfig cfg;
      if (!grad_config.empty()) {
        RunConfig rc = load_run_config(grad_config);
        sc = rc.synthetic;
        cfg = rc.train;
        if (cfg.k != sc.k) {
          throw ConfigError("gradcheck: train.k must match synthetic.k");
        }
      } else {
        // Built-in desk-scale audit setup.
        sc.C = 3;
        sc.train_per_category = 4;
        sc.test_per_category = 0;
        sc.k = 4;
        sc.clean_per_bag = 2;
        sc.d1 = 10;
        sc.d2 = 6;
        sc.seed = 7;
        cfg.k = 4;
        cfg.b = 2;
        cfg.r = 8;
        cfg.r_prime = 6;
        cfg.batch_size = 6;
        cfg.seed = 7;
      }
      const PairedDataset ds = generate_synthetic(sc);
      const int n = std::min(cfg.batch_size,
                             static_cast<int>(ds.train_indices().size()));
      BatchSampler sampler(ds, n, cfg.seed + 2);
      const Batch batch = make_batch(ds, sampler.next());
      const ModelState model = init_params({ds.d1, ds.d2, cfg.r, cfg.r_prime, ds.C},
                                           cfg.hidden_activation, cfg.seed);
      GradCheckOptions opts;
      opts.max_coords_per_group = grad_budget;
      opts.corrupt = grad_corrupt;
      const auto entries = grad_check_all(model, batch, cfg, opts);
      bool all_ok = true;
      for (const auto& e : entries) {
        std::printf("loss=%-14s group=%-13s %s coords=%-5lld max_rel_err=%-12.3e %s\n",
                    e.loss.c_str(), e.group.c_str(),
                    e.structural_zero ? "zero  " : "active",
                    static_cast<long long>(e.coords_checked), e.max_rel_err,
                    e.passed ? "[ok]" : "[FAIL]");
        all_ok = all_ok && e.passed;
      }
      if (!all_ok) {
        std::cerr << "gradient audit failed\n";
        return 4;
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
