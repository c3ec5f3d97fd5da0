#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emcid/matrix.hpp"
#include "emcid/rng.hpp"
#include "emcid/tape.hpp"
#include "emcid/vocab.hpp"

namespace emcid {

struct EncoderConfig {
  int n_layers = 6;
  int d_model = 32;
  int d_ff = 128;
  int n_heads = 4;
  int max_seq = 16;
};

// Weight layout is out x in so a row-major activation block X (seq x in)
// maps through matmul_nt(X, W). GELU is fixed; it is part of the
// architecture, not a knob.
struct EncoderLayer {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;       // d_model x d_model
  Matrix bq, bk, bv, bo;       // 1 x d_model
  Matrix ln2_gain, ln2_bias;
  Matrix w_fc, b_fc;           // d_ff x d_model, 1 x d_ff
  Matrix w_proj, b_proj;       // d_model x d_ff, 1 x d_model  (the associative memory)
};

struct EncoderModel {
  EncoderConfig cfg;
  Matrix token_emb;            // vocab x d_model
  Matrix pos_emb;              // max_seq x d_model
  std::vector<EncoderLayer> layers;
  Matrix lnf_gain, lnf_bias;
};

EncoderModel init_encoder(const EncoderConfig& cfg, int vocab_size, Rng& rng);

// Canonical parameter order, shared by tape binding, the Adam trainer and
// checkpoint serialization.
std::vector<Matrix*> encoder_params(EncoderModel& m);
std::vector<std::pair<std::string, const Matrix*>> encoder_named_params(const EncoderModel& m);

// Value substitution v -> v + delta at one (layer, token position).
struct HookSpec {
  int layer = 0;
  int pos = 0;
  Matrix delta;  // 1 x d_model
};

struct EncoderNodes {
  const EncoderConfig* cfg = nullptr;
  NodeId token_emb, pos_emb;
  struct LayerNodes {
    NodeId ln1_gain, ln1_bias, wq, wk, wv, wo, bq, bk, bv, bo;
    NodeId ln2_gain, ln2_bias, w_fc, b_fc, w_proj, b_proj;
  };
  std::vector<LayerNodes> layers;
  NodeId lnf_gain, lnf_bias;
  std::vector<NodeId> leaves;  // nonempty iff bound trainable
};

EncoderNodes bind_encoder(GradTape& tape, const EncoderModel& m, bool trainable);

struct EncodeTrace {
  std::vector<NodeId> layer_input;  // residual stream entering each layer
  std::vector<NodeId> mlp_key;      // post-activation sigma(W_fc h + b) per layer (seq x d_ff)
  std::vector<NodeId> mlp_out;      // MLP output incl. hook, pre-residual (seq x d_model)
  NodeId embedding;                 // 1 x d_model, [EOS] row after final layer norm
};

// Forward pass on the tape. hook_delta < 0 disables the hook.
EncodeTrace encoder_forward(GradTape& tape, const EncoderNodes& nodes, std::span<const int> ids,
                            int hook_layer = -1, int hook_pos = -1, NodeId hook_delta = -1);

// Sentence embedding E(p): the [EOS] feature after the final layer. Pure in
// (weights, prompt); with a hook, the layer-l MLP output at hook.pos gets
// hook.delta added and nothing else changes.
Matrix encode(const EncoderModel& m, const Vocabulary& vocab, const std::string& prompt,
              const HookSpec* hook = nullptr);

void validate_hook(const EncoderModel& m, const HookSpec& hook, int seq_len);

// Mean over prompts of the layer-l post-activation vector at the last
// subject token. Throws SubjectNotFound naming the offending prompt.
Matrix extract_key(const EncoderModel& m, const Vocabulary& vocab, int layer,
                   std::span<const std::string> prompts, const std::string& subject);

// v = W_proj(l) k, the value the associative memory stores for key k.
Matrix read_value(const EncoderModel& m, int layer, const Matrix& key);

// Copy of the model with layer l's projection replaced (editing never
// mutates in place).
EncoderModel with_projection(const EncoderModel& m, int layer, Matrix w_proj);

int subject_position_in_prompt(const Vocabulary& vocab, const std::string& prompt,
                               const std::string& subject);

}  // namespace emcid
