#pragma once

#include <string>
#include <vector>

#include "emcid/denoiser.hpp"
#include "emcid/encoder.hpp"
#include "emcid/registry.hpp"
#include "emcid/schedule.hpp"

namespace emcid {

struct TrainConfig {
  int steps = 4000;
  int batch = 16;
  double lr = 2e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Weight of the contrastive alignment of E(p) to its class prototype,
  // added to the per-element denoising MSE.
  double contrast_weight = 0.3;
};

// Adam over an explicit parameter list; state matrices mirror the params.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Matrix*> params, double lr, double beta1, double beta2, double eps);
  void step(const std::vector<Matrix>& grads);

 private:
  std::vector<Matrix*> params_;
  std::vector<Matrix> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

struct TrainedModels {
  EncoderModel encoder;
  DenoiserModel denoiser;
  double final_denoise_loss = 0.0;
  double final_contrast_loss = 0.0;
  std::vector<double> loss_trace;  // total loss per step
};

// Joint pre-training: contrastive alignment of [EOS] embeddings to fixed
// random class prototypes plus the conditional denoising loss, both
// optimized with Adam in one loop. Deterministic given the seed.
TrainedModels train_models(const Vocabulary& vocab, const ConceptRegistry& registry,
                           const EncoderConfig& enc_cfg, const DenoiserConfig& den_cfg,
                           const NoiseSchedule& schedule, const TrainConfig& cfg, uint64_t seed);

struct DenoiserTrainResult {
  DenoiserModel model;
  double final_loss = 0.0;
  std::vector<double> loss_trace;
};

// Trains only the denoiser on explicit (image, prompt) pairs with the
// encoder frozen. Throws DivergedTraining when the loss goes non-finite.
DenoiserTrainResult train_denoiser(const std::vector<std::pair<Matrix, std::string>>& dataset,
                                   const EncoderModel& encoder, const Vocabulary& vocab,
                                   const NoiseSchedule& schedule, const DenoiserConfig& den_cfg,
                                   const TrainConfig& cfg, uint64_t seed);

double smoothed_tail_loss(const std::vector<double>& trace, int window);

}  // namespace emcid
