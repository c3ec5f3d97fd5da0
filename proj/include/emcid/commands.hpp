#pragma once

#include <string>
#include <vector>

#include "emcid/config.hpp"

namespace emcid {

// CLI entry points. Inputs are never mutated; outputs go to fresh files
// under cfg.out_dir. Each writes a .provenance.json sidecar recording the
// seed, the config hash and git-style content hashes of its input files.

int cmd_train(const RunConfig& cfg);
int cmd_covariance(const RunConfig& cfg, const std::string& model_ckpt);
int cmd_stage1(const RunConfig& cfg, const std::string& model_ckpt,
               const std::string& requests_path);
int cmd_edit(const RunConfig& cfg, const std::string& model_ckpt, const std::string& payloads_ckpt,
             const std::string& cov_ckpt, const std::string& requests_path);
int cmd_eval(const RunConfig& cfg, const std::string& pre_ckpt, const std::string& post_ckpt,
             const std::string& requests_path);
int cmd_rectify(const RunConfig& cfg, const std::string& model_ckpt,
                const std::string& requests_path, const std::string& cov_ckpt);
struct DebiasCliOptions {
  std::string subject;
  double eta0 = 0.4;
  int max_iters = 30;
  double min_diff = 0.05;
  int ratio_samples = 24;
  int metric_samples = 48;
};
int cmd_debias(const RunConfig& cfg, const std::string& model_ckpt, const std::string& cov_ckpt,
               const DebiasCliOptions& opts);
int cmd_sweep_alpha(const RunConfig& cfg, const std::string& model_ckpt,
                    const std::string& payloads_ckpt, const std::string& cov_ckpt,
                    const std::vector<double>& alphas);
int cmd_sweep_layers(const RunConfig& cfg, const std::string& model_ckpt,
                     const std::string& payloads_ckpt, const std::string& cov_ckpt,
                     const std::string& requests_path, const std::string& ranges_spec);
int cmd_sweep_scale(const RunConfig& cfg, const std::string& model_ckpt,
                    const std::string& payloads_ckpt, const std::string& cov_ckpt,
                    const std::string& requests_path, const std::vector<int>& counts);

// Shared helpers (also used by the acceptance suite).
std::vector<std::string> load_corpus(const std::string& path);
std::vector<LayerEditPayload> run_stage1(const ModelPair& models, const NoiseSchedule& schedule,
                                         const Vocabulary& vocab,
                                         const std::vector<EditRequest>& requests,
                                         const Stage1Config& base, const std::vector<int>& layers,
                                         int workers);
std::vector<std::pair<int, int>> parse_ranges(const std::string& spec);

}  // namespace emcid
