#include "emcid/config.hpp"

#include <filesystem>
#include <fstream>

#include "emcid/sha1.hpp"
#include "emcid/workers.hpp"

namespace emcid {

using nlohmann::json;

EditPlan RunConfig::edit_plan(int n_layers) const {
  EditPlan plan;
  plan.alpha = edit_alpha;
  plan.layer_lo = edit_layer_lo;
  plan.layer_hi = edit_layer_hi < 0 ? n_layers - 2 : edit_layer_hi;
  plan.recompute_keys = recompute_keys;
  return plan;
}

int RunConfig::effective_workers() const {
  return workers > 0 ? workers : default_workers();
}

void RunConfig::validate() const {
  namespace fs = std::filesystem;
  for (const auto& [label, path] :
       {std::pair<const char*, const std::string&>{"vocab", vocab_path},
        {"registry", registry_path},
        {"corpus", corpus_path}}) {
    if (path.empty()) throw ConfigError(std::string(label) + " path is not set");
    if (!fs::exists(path))
      throw ConfigError(std::string(label) + " path does not exist: " + path);
  }
  if (!(edit_alpha > 0.0 && edit_alpha < 1.0))
    throw ConfigError("alpha must lie in (0, 1), got " + std::to_string(edit_alpha));
  if (edit_lambda <= 0.0) throw ConfigError("lambda must be positive");
  const int hi = edit_layer_hi < 0 ? encoder.n_layers - 2 : edit_layer_hi;
  if (edit_layer_lo < 0 || hi >= encoder.n_layers - 1 || edit_layer_lo > hi)
    throw ConfigError("edit layer range [" + std::to_string(edit_layer_lo) + ", " +
                      std::to_string(hi) + "] must satisfy 0 <= lo <= hi < n_layers - 1");
  if (denoiser.c_dim != encoder.d_model)
    throw ConfigError("denoiser condition dim must equal encoder d_model");
  if (bench_images_per_cell < 1) throw ConfigError("bench images per cell must be >= 1");
  if (stage1.steps <= 0 || stage1.lr <= 0.0 || stage1.lambda_s < 0.0)
    throw ConfigError("stage1: steps > 0, lr > 0, lambda_s >= 0 required");
}

json RunConfig::to_json() const {
  json doc;
  doc["seed"] = seed;
  doc["workers"] = workers;
  doc["paths"] = {{"vocab", vocab_path},
                  {"registry", registry_path},
                  {"corpus", corpus_path},
                  {"out_dir", out_dir}};
  doc["encoder"] = {{"n_layers", encoder.n_layers}, {"d_model", encoder.d_model},
                    {"d_ff", encoder.d_ff},         {"n_heads", encoder.n_heads},
                    {"max_seq", encoder.max_seq}};
  doc["denoiser"] = {{"hidden", denoiser.hidden},
                     {"t_dim", denoiser.t_dim},
                     {"blocks", denoiser.blocks}};
  doc["schedule"] = {{"steps", schedule.steps},
                     {"beta_min", schedule.beta_min},
                     {"beta_max", schedule.beta_max}};
  doc["train"] = {{"steps", train.steps},
                  {"batch", train.batch},
                  {"lr", train.lr},
                  {"contrast_weight", train.contrast_weight}};
  doc["stage1"] = {{"steps", stage1.steps},
                   {"lr", stage1.lr},
                   {"lambda_s", stage1.lambda_s},
                   {"noise_images", stage1.noise_images},
                   {"noise_timesteps", stage1.noise_timesteps},
                   {"objective", objective_name(stage1.objective)}};
  doc["edit"] = {{"alpha", edit_alpha},
                 {"lambda", edit_lambda},
                 {"layer_lo", edit_layer_lo},
                 {"layer_hi", edit_layer_hi},
                 {"recompute_keys", recompute_keys}};
  doc["bench"] = {{"images_per_cell", bench_images_per_cell}, {"oracle_tau", oracle_tau}};
  return doc;
}

RunConfig RunConfig::from_json(const json& doc) {
  RunConfig cfg;
  cfg.seed = doc.value("seed", uint64_t(0));
  cfg.workers = doc.value("workers", 0);
  if (doc.contains("paths")) {
    const auto& p = doc.at("paths");
    cfg.vocab_path = p.value("vocab", "");
    cfg.registry_path = p.value("registry", "");
    cfg.corpus_path = p.value("corpus", "");
    cfg.out_dir = p.value("out_dir", "out");
  }
  if (doc.contains("encoder")) {
    const auto& e = doc.at("encoder");
    cfg.encoder.n_layers = e.value("n_layers", cfg.encoder.n_layers);
    cfg.encoder.d_model = e.value("d_model", cfg.encoder.d_model);
    cfg.encoder.d_ff = e.value("d_ff", cfg.encoder.d_ff);
    cfg.encoder.n_heads = e.value("n_heads", cfg.encoder.n_heads);
    cfg.encoder.max_seq = e.value("max_seq", cfg.encoder.max_seq);
  }
  cfg.denoiser.c_dim = cfg.encoder.d_model;
  if (doc.contains("denoiser")) {
    const auto& d = doc.at("denoiser");
    cfg.denoiser.hidden = d.value("hidden", cfg.denoiser.hidden);
    cfg.denoiser.t_dim = d.value("t_dim", cfg.denoiser.t_dim);
    cfg.denoiser.blocks = d.value("blocks", cfg.denoiser.blocks);
  }
  if (doc.contains("schedule")) {
    const auto& s = doc.at("schedule");
    cfg.schedule.steps = s.value("steps", cfg.schedule.steps);
    cfg.schedule.beta_min = s.value("beta_min", cfg.schedule.beta_min);
    cfg.schedule.beta_max = s.value("beta_max", cfg.schedule.beta_max);
  }
  if (doc.contains("train")) {
    const auto& t = doc.at("train");
    cfg.train.steps = t.value("steps", cfg.train.steps);
    cfg.train.batch = t.value("batch", cfg.train.batch);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.contrast_weight = t.value("contrast_weight", cfg.train.contrast_weight);
  }
  if (doc.contains("stage1")) {
    const auto& s = doc.at("stage1");
    cfg.stage1.steps = s.value("steps", cfg.stage1.steps);
    cfg.stage1.lr = s.value("lr", cfg.stage1.lr);
    cfg.stage1.lambda_s = s.value("lambda_s", cfg.stage1.lambda_s);
    cfg.stage1.noise_images = s.value("noise_images", cfg.stage1.noise_images);
    cfg.stage1.noise_timesteps = s.value("noise_timesteps", cfg.stage1.noise_timesteps);
    cfg.stage1.objective = objective_from_name(s.value("objective", "hybrid"));
  }
  if (doc.contains("edit")) {
    const auto& e = doc.at("edit");
    cfg.edit_alpha = e.value("alpha", cfg.edit_alpha);
    cfg.edit_lambda = e.value("lambda", cfg.edit_lambda);
    cfg.edit_layer_lo = e.value("layer_lo", cfg.edit_layer_lo);
    cfg.edit_layer_hi = e.value("layer_hi", cfg.edit_layer_hi);
    cfg.recompute_keys = e.value("recompute_keys", cfg.recompute_keys);
  }
  if (doc.contains("bench")) {
    const auto& b = doc.at("bench");
    cfg.bench_images_per_cell = b.value("images_per_cell", cfg.bench_images_per_cell);
    cfg.oracle_tau = b.value("oracle_tau", cfg.oracle_tau);
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw FormatError("config parse error in " + path + ": " + e.what());
  }
  return from_json(doc);
}

std::string RunConfig::config_hash() const { return git_blob_hash(to_json().dump()); }

}  // namespace emcid
