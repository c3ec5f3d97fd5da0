#pragma once

#include <span>
#include <string>
#include <vector>

#include "emcid/matrix.hpp"
#include "emcid/render.hpp"
#include "emcid/rng.hpp"
#include "emcid/schedule.hpp"
#include "emcid/tape.hpp"

namespace emcid {

struct DenoiserConfig {
  int x_dim = kImagePixels;
  int hidden = 128;
  int t_dim = 32;
  int c_dim = 32;  // must match the encoder's d_model
  int blocks = 3;
};

// Residual MLP noise predictor. The condition vector enters additively
// through its own projection, so the prediction is a smooth function of c
// and the stage-I losses can differentiate through it.
struct DenoiserBlock {
  Matrix w1, b1, w2, b2;
};

struct DenoiserModel {
  DenoiserConfig cfg;
  Matrix w_x, w_t, w_c, b_in;  // hidden x x_dim, hidden x t_dim, hidden x c_dim, 1 x hidden
  std::vector<DenoiserBlock> blocks;
  Matrix w_out, b_out;         // x_dim x hidden, 1 x x_dim
};

DenoiserModel init_denoiser(const DenoiserConfig& cfg, Rng& rng);
std::vector<Matrix*> denoiser_params(DenoiserModel& m);
std::vector<std::pair<std::string, const Matrix*>> denoiser_named_params(const DenoiserModel& m);

struct DenoiserNodes {
  const DenoiserConfig* cfg = nullptr;
  NodeId w_x, w_t, w_c, b_in;
  struct BlockNodes {
    NodeId w1, b1, w2, b2;
  };
  std::vector<BlockNodes> blocks;
  NodeId w_out, b_out;
  std::vector<NodeId> leaves;
};

DenoiserNodes bind_denoiser(GradTape& tape, const DenoiserModel& m, bool trainable);

// x: B x x_dim, temb: B x t_dim. cond is either 1 x c_dim (broadcast over
// the batch) or B x c_dim.
NodeId denoiser_forward(GradTape& tape, const DenoiserNodes& nodes, NodeId x, NodeId temb,
                        NodeId cond);

Matrix time_embedding(int t, int dim);
Matrix time_embedding_batch(std::span<const int> ts, int dim);

// eps_hat(x_t, c, t) for a batch of rows sharing one condition vector.
Matrix predict_noise(const DenoiserModel& m, const Matrix& x_t, const Matrix& cond, int t);
Matrix predict_noise_batch(const DenoiserModel& m, const Matrix& x_t, const Matrix& cond,
                           std::span<const int> ts);

// Ancestral DDPM sampling over the full chain; `steps` must equal the
// schedule length (the toy chain is short enough to never skip steps).
Matrix sample_image(const DenoiserModel& m, const NoiseSchedule& schedule, const Matrix& cond,
                    int steps, uint64_t seed);

// n images batched through the denoiser. Image i draws from its own stream
// derive_seed(seed, i), so row i is the same for every n >= i+1 and for any
// worker count.
Matrix sample_images(const DenoiserModel& m, const NoiseSchedule& schedule, const Matrix& cond,
                     int n, int steps, uint64_t seed);

}  // namespace emcid
