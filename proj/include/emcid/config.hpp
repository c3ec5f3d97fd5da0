#pragma once

#include <string>
#include <vector>

#include "emcid/bench.hpp"
#include "emcid/denoiser.hpp"
#include "emcid/encoder.hpp"
#include "emcid/stage1.hpp"
#include "emcid/stage2.hpp"
#include "emcid/training.hpp"

namespace emcid {

struct SchedulePlan {
  int steps = 50;
  double beta_min = 1e-4;
  double beta_max = 0.05;
};

struct RunConfig {
  uint64_t seed = 0;
  int workers = 0;  // 0: use available parallelism

  std::string vocab_path;
  std::string registry_path;
  std::string corpus_path;
  std::string out_dir = "out";

  EncoderConfig encoder;
  DenoiserConfig denoiser;
  SchedulePlan schedule;
  TrainConfig train;
  Stage1Config stage1;

  double edit_alpha = 0.5;
  double edit_lambda = 1.0;
  int edit_layer_lo = 0;
  int edit_layer_hi = -1;  // -1: all layers except the last
  bool recompute_keys = true;

  int bench_images_per_cell = 16;
  double oracle_tau = 10.0;

  EditPlan edit_plan(int n_layers) const;
  NoiseSchedule make_schedule() const { return NoiseSchedule::linear(schedule.steps,
                                                                     schedule.beta_min,
                                                                     schedule.beta_max); }
  int effective_workers() const;

  // Fails with ConfigError naming the first problem (missing path, alpha
  // outside (0,1), bad layer range, ...).
  void validate() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::string& path);

  std::string config_hash() const;  // git-style hash of the canonical JSON dump
};

}  // namespace emcid
