#pragma once

#include <optional>
#include <string>
#include <vector>

#include "emcid/denoiser.hpp"
#include "emcid/encoder.hpp"
#include "emcid/schedule.hpp"
#include "emcid/vocab.hpp"

namespace emcid {

// One concept edit: move generations conditioned on the source prompts
// towards the destination, given either destination prompts (paired with
// the source prompts template-by-template) or destination images.
struct EditRequest {
  std::string concept_id;
  std::string subject;
  std::vector<std::string> source_prompts;
  std::vector<std::string> dest_prompts;
  std::vector<Matrix> dest_images;  // each 1 x kImagePixels
  std::vector<int> layers;
  // Registry id of the destination concept, when the edit maps onto the
  // benchmark; empty for free-form edits.
  std::string dest_concept;

  bool image_destination() const { return !dest_images.empty(); }
};

std::vector<EditRequest> load_edit_requests(const std::string& path);
void save_edit_requests(const std::vector<EditRequest>& requests, const std::string& path);

enum class Objective { Hybrid, TextOnly, NoiseOnly };

Objective objective_from_name(const std::string& name);
std::string objective_name(Objective o);

struct Stage1Config {
  int steps = 200;          // gradient updates per (concept, layer)
  double lr = 0.2;          // constant step size, plain gradient descent
  double lambda_s = 0.01;   // weight of the text loss inside the hybrid loss
  int noise_images = 8;     // base images behind the noise-loss Monte Carlo
  int noise_timesteps = 4;  // timestep draws per base image and step
  bool resample_each_step = true;
  Objective objective = Objective::Hybrid;
  uint64_t seed = 0;
};

struct LossBreakdown {
  double txt = 0.0;
  double noise = 0.0;
  double hybrid = 0.0;
};

struct LayerEditPayload {
  std::string concept_id;
  int layer = 0;
  Matrix key;        // 1 x d_ff
  Matrix value;      // 1 x d_model, v = W k
  Matrix delta;      // 1 x d_model, optimized offset
  Matrix new_value;  // v + delta, exactly
  LossBreakdown final_loss;
};

// Monte Carlo batch for the noise / image loss: rows pair a noised sample
// with its timestep, a source-prompt index and the regression target
// (the destination-branch prediction for prompt edits, the drawn noise for
// image edits).
struct NoiseBatch {
  Matrix x_t;
  std::vector<int> ts;
  std::vector<int> pair;
  Matrix targets;
};

// Everything one concept edit needs, precomputed once: tokenized prompts,
// subject positions, destination embeddings and the destination-sampled
// base images. Pure given (models, request, config); safe to run many
// contexts in parallel.
class Stage1Context {
 public:
  Stage1Context(const EncoderModel& encoder, const DenoiserModel& denoiser,
                const NoiseSchedule& schedule, const Vocabulary& vocab, EditRequest request,
                Stage1Config config);

  NoiseBatch sample_batch(uint64_t seed) const;

  // Mean over the prompt group of || E_{v+delta}(p) - E(p_hat) ||^2.
  double loss_txt(int layer, const Matrix& delta) const;
  // Monte Carlo estimate of || eps(x_t, E_{v+delta}(p), t) - eps(x_t, E(p_hat), t) ||^2.
  double loss_noise(int layer, const Matrix& delta, const NoiseBatch& batch) const;
  // Image-destination variant: target is the ground-truth noise.
  double loss_image(int layer, const Matrix& delta, const NoiseBatch& batch) const;

  struct Eval {
    double value;
    Matrix grad;
    LossBreakdown breakdown;
  };
  Eval objective_with_grad(int layer, const Matrix& delta, const NoiseBatch* batch,
                           Objective objective) const;

  LayerEditPayload optimize(int layer) const;
  std::vector<double> last_loss_trace() const { return loss_trace_; }

  const EditRequest& request() const { return request_; }

 private:

  const EncoderModel& encoder_;
  const DenoiserModel& denoiser_;
  const NoiseSchedule& schedule_;
  const Vocabulary& vocab_;
  EditRequest request_;
  Stage1Config config_;
  std::vector<std::vector<int>> source_ids_;
  std::vector<int> subject_pos_;
  Matrix dest_emb_;     // P x d_model for prompt destinations
  Matrix base_images_;  // destination-sampled or user images
  mutable std::vector<double> loss_trace_;
};

// Stage-I entry point: optimize the value offset for one concept and layer.
LayerEditPayload optimize_value(const EncoderModel& encoder, const DenoiserModel& denoiser,
                                const NoiseSchedule& schedule, const Vocabulary& vocab,
                                const EditRequest& request, int layer,
                                const Stage1Config& config);

}  // namespace emcid
