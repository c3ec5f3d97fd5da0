#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emcid/commands.hpp"

using namespace emcid;

int main(int argc, char** argv) {
  CLI::App app{"EMCID toy pipeline: train, edit and evaluate a text-conditioned diffusion model"};
  app.require_subcommand(1);

  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  int workers = -1;
  std::string out_dir;
  app.add_option("--config", config_path, "run config JSON")->required();
  app.add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_option("--workers", workers, "worker threads (default: available parallelism)");
  app.add_option("--out", out_dir, "output directory (overrides config)");

  std::string model, payloads, cov, requests, pre, post;
  std::string ranges = "3-4,2-4,0-4";
  std::vector<double> alphas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<int> counts = {4, 8, 12};
  DebiasCliOptions debias;

  CLI::App* c_train = app.add_subcommand("train", "pre-train encoder + denoiser");
  CLI::App* c_cov = app.add_subcommand("covariance", "estimate preservation key statistics");
  c_cov->add_option("--model", model, "model checkpoint")->required();
  CLI::App* c_stage1 = app.add_subcommand("stage1", "optimize per-concept value offsets");
  c_stage1->add_option("--model", model, "model checkpoint")->required();
  c_stage1->add_option("--requests", requests, "edit request file")->required();
  CLI::App* c_edit = app.add_subcommand("edit", "closed-form multi-layer weight update");
  c_edit->add_option("--model", model, "model checkpoint")->required();
  c_edit->add_option("--payloads", payloads, "stage1 payload archive")->required();
  c_edit->add_option("--cov", cov, "covariance checkpoint")->required();
  c_edit->add_option("--requests", requests, "edit request file (for key recomputation)");
  CLI::App* c_eval = app.add_subcommand("eval", "benchmark a pre/post model pair");
  c_eval->add_option("--pre", pre, "pre-edit checkpoint")->required();
  c_eval->add_option("--post", post, "post-edit checkpoint")->required();
  c_eval->add_option("--requests", requests, "edit request file")->required();
  CLI::App* c_rect = app.add_subcommand("rectify", "repair misunderstood aliases end to end");
  c_rect->add_option("--model", model, "model checkpoint")->required();
  c_rect->add_option("--requests", requests, "rectification request file")->required();
  c_rect->add_option("--cov", cov, "covariance checkpoint")->required();
  CLI::App* c_debias = app.add_subcommand("debias", "balance attribute ratios for a subject");
  c_debias->add_option("--model", model, "model checkpoint")->required();
  c_debias->add_option("--cov", cov, "covariance checkpoint")->required();
  c_debias->add_option("--subject", debias.subject, "bare subject to debias")->required();
  c_debias->add_option("--eta0", debias.eta0, "initial learning step");
  c_debias->add_option("--max-iters", debias.max_iters, "max edit/restore cycles");
  c_debias->add_option("--min-diff", debias.min_diff, "ratio convergence threshold");
  c_debias->add_option("--ratio-samples", debias.ratio_samples, "samples per ratio estimate");
  CLI::App* c_salpha = app.add_subcommand("sweep-alpha", "editing intensity trade-off table");
  c_salpha->add_option("--model", model, "model checkpoint")->required();
  c_salpha->add_option("--payloads", payloads, "stage1 payload archive")->required();
  c_salpha->add_option("--cov", cov, "covariance checkpoint")->required();
  c_salpha->add_option("--alphas", alphas, "alpha grid");
  CLI::App* c_slayers = app.add_subcommand("sweep-layers", "layer-range ablation table");
  c_slayers->add_option("--model", model, "model checkpoint")->required();
  c_slayers->add_option("--payloads", payloads, "stage1 payload archive")->required();
  c_slayers->add_option("--cov", cov, "covariance checkpoint")->required();
  c_slayers->add_option("--requests", requests, "edit request file")->required();
  c_slayers->add_option("--ranges", ranges, "comma-separated lo-hi ranges");
  CLI::App* c_sscale = app.add_subcommand("sweep-scale", "edit-count sweep table");
  c_sscale->add_option("--model", model, "model checkpoint")->required();
  c_sscale->add_option("--payloads", payloads, "stage1 payload archive")->required();
  c_sscale->add_option("--cov", cov, "covariance checkpoint")->required();
  c_sscale->add_option("--requests", requests, "edit request file")->required();
  c_sscale->add_option("--counts", counts, "edit counts to evaluate");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = RunConfig::load(config_path);
    if (seed_set) cfg.seed = seed;
    if (workers >= 0) cfg.workers = workers;
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    if (c_train->parsed()) return cmd_train(cfg);
    if (c_cov->parsed()) return cmd_covariance(cfg, model);
    if (c_stage1->parsed()) return cmd_stage1(cfg, model, requests);
    if (c_edit->parsed()) return cmd_edit(cfg, model, payloads, cov, requests);
    if (c_eval->parsed()) return cmd_eval(cfg, pre, post, requests);
    if (c_rect->parsed()) return cmd_rectify(cfg, model, requests, cov);
    if (c_debias->parsed()) return cmd_debias(cfg, model, cov, debias);
    if (c_salpha->parsed()) return cmd_sweep_alpha(cfg, model, payloads, cov, alphas);
    if (c_slayers->parsed()) return cmd_sweep_layers(cfg, model, payloads, cov, requests, ranges);
    if (c_sscale->parsed()) return cmd_sweep_scale(cfg, model, payloads, cov, requests, counts);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
