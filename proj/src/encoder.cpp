#include "emcid/encoder.hpp"

#include <cmath>
#include <numeric>

namespace emcid {

EncoderModel init_encoder(const EncoderConfig& cfg, int vocab_size, Rng& rng) {
  if (cfg.d_model % cfg.n_heads != 0)
    throw ConfigError("d_model must be divisible by n_heads");
  EncoderModel m;
  m.cfg = cfg;
  const double emb_std = 0.02;
  const double attn_std = 1.0 / std::sqrt(double(cfg.d_model));
  const double fc_std = 1.0 / std::sqrt(double(cfg.d_model));
  const double proj_std = 1.0 / std::sqrt(double(cfg.d_ff));
  m.token_emb = rng.normal_matrix(vocab_size, cfg.d_model, emb_std);
  m.pos_emb = rng.normal_matrix(cfg.max_seq, cfg.d_model, emb_std);
  m.layers.resize(cfg.n_layers);
  for (auto& l : m.layers) {
    l.ln1_gain = Matrix(1, cfg.d_model);
    l.ln1_bias = Matrix(1, cfg.d_model);
    l.ln2_gain = Matrix(1, cfg.d_model);
    l.ln2_bias = Matrix(1, cfg.d_model);
    for (int j = 0; j < cfg.d_model; ++j) l.ln1_gain(0, j) = l.ln2_gain(0, j) = 1.0;
    l.wq = rng.normal_matrix(cfg.d_model, cfg.d_model, attn_std);
    l.wk = rng.normal_matrix(cfg.d_model, cfg.d_model, attn_std);
    l.wv = rng.normal_matrix(cfg.d_model, cfg.d_model, attn_std);
    l.wo = rng.normal_matrix(cfg.d_model, cfg.d_model, attn_std);
    l.bq = Matrix(1, cfg.d_model);
    l.bk = Matrix(1, cfg.d_model);
    l.bv = Matrix(1, cfg.d_model);
    l.bo = Matrix(1, cfg.d_model);
    l.w_fc = rng.normal_matrix(cfg.d_ff, cfg.d_model, fc_std);
    l.b_fc = Matrix(1, cfg.d_ff);
    l.w_proj = rng.normal_matrix(cfg.d_model, cfg.d_ff, proj_std);
    l.b_proj = Matrix(1, cfg.d_model);
  }
  m.lnf_gain = Matrix(1, cfg.d_model);
  m.lnf_bias = Matrix(1, cfg.d_model);
  for (int j = 0; j < cfg.d_model; ++j) m.lnf_gain(0, j) = 1.0;
  return m;
}

std::vector<Matrix*> encoder_params(EncoderModel& m) {
  std::vector<Matrix*> p;
  p.push_back(&m.token_emb);
  p.push_back(&m.pos_emb);
  for (auto& l : m.layers) {
    for (Matrix* w : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.wk, &l.wv, &l.wo, &l.bq, &l.bk, &l.bv,
                      &l.bo, &l.ln2_gain, &l.ln2_bias, &l.w_fc, &l.b_fc, &l.w_proj, &l.b_proj})
      p.push_back(w);
  }
  p.push_back(&m.lnf_gain);
  p.push_back(&m.lnf_bias);
  return p;
}

std::vector<std::pair<std::string, const Matrix*>> encoder_named_params(const EncoderModel& m) {
  std::vector<std::pair<std::string, const Matrix*>> p;
  p.emplace_back("encoder/token_emb", &m.token_emb);
  p.emplace_back("encoder/pos_emb", &m.pos_emb);
  const char* names[] = {"ln1_gain", "ln1_bias", "wq", "wk", "wv", "wo", "bq", "bk", "bv",
                         "bo", "ln2_gain", "ln2_bias", "w_fc", "b_fc", "w_proj", "b_proj"};
  for (size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    const Matrix* ws[] = {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.wk, &l.wv, &l.wo, &l.bq, &l.bk,
                          &l.bv, &l.bo, &l.ln2_gain, &l.ln2_bias, &l.w_fc, &l.b_fc, &l.w_proj,
                          &l.b_proj};
    for (int k = 0; k < 16; ++k)
      p.emplace_back("encoder/layer_" + std::to_string(i) + "/" + names[k], ws[k]);
  }
  p.emplace_back("encoder/lnf_gain", &m.lnf_gain);
  p.emplace_back("encoder/lnf_bias", &m.lnf_bias);
  return p;
}

EncoderNodes bind_encoder(GradTape& tape, const EncoderModel& m, bool trainable) {
  EncoderNodes n;
  n.cfg = &m.cfg;
  auto bind = [&](const Matrix& w) {
    const NodeId id = trainable ? tape.leaf(w) : tape.constant(w);
    if (trainable) n.leaves.push_back(id);
    return id;
  };
  n.token_emb = bind(m.token_emb);
  n.pos_emb = bind(m.pos_emb);
  for (const auto& l : m.layers) {
    EncoderNodes::LayerNodes ln;
    ln.ln1_gain = bind(l.ln1_gain);
    ln.ln1_bias = bind(l.ln1_bias);
    ln.wq = bind(l.wq);
    ln.wk = bind(l.wk);
    ln.wv = bind(l.wv);
    ln.wo = bind(l.wo);
    ln.bq = bind(l.bq);
    ln.bk = bind(l.bk);
    ln.bv = bind(l.bv);
    ln.bo = bind(l.bo);
    ln.ln2_gain = bind(l.ln2_gain);
    ln.ln2_bias = bind(l.ln2_bias);
    ln.w_fc = bind(l.w_fc);
    ln.b_fc = bind(l.b_fc);
    ln.w_proj = bind(l.w_proj);
    ln.b_proj = bind(l.b_proj);
    n.layers.push_back(ln);
  }
  n.lnf_gain = bind(m.lnf_gain);
  n.lnf_bias = bind(m.lnf_bias);
  return n;
}

namespace {

Matrix causal_mask(int seq) {
  Matrix mask(seq, seq);
  for (int i = 0; i < seq; ++i)
    for (int j = i + 1; j < seq; ++j) mask(i, j) = -1e30;
  return mask;
}

NodeId layer_norm(GradTape& t, NodeId x, NodeId gain, NodeId bias) {
  return t.add_row_broadcast(t.mul_row_broadcast(t.norm_rows(x), gain), bias);
}

NodeId linear_nt(GradTape& t, NodeId x, NodeId w, NodeId b) {
  return t.add_row_broadcast(t.matmul_nt(x, w), b);
}

}  // namespace

EncodeTrace encoder_forward(GradTape& tape, const EncoderNodes& nodes, std::span<const int> ids,
                            int hook_layer, int hook_pos, NodeId hook_delta) {
  const EncoderConfig& cfg = *nodes.cfg;
  const int seq = int(ids.size());
  if (seq < 2 || seq > cfg.max_seq)
    throw DimensionMismatch("sequence length " + std::to_string(seq) + " outside [2, " +
                            std::to_string(cfg.max_seq) + "]");
  const int dh = cfg.d_model / cfg.n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));

  std::vector<int> id_vec(ids.begin(), ids.end());
  std::vector<int> positions(seq);
  std::iota(positions.begin(), positions.end(), 0);
  NodeId x = tape.add(tape.gather_rows(nodes.token_emb, id_vec),
                      tape.gather_rows(nodes.pos_emb, positions));
  const NodeId mask = tape.constant(causal_mask(seq));

  EncodeTrace trace;
  for (int li = 0; li < cfg.n_layers; ++li) {
    const auto& l = nodes.layers[li];
    trace.layer_input.push_back(x);

    NodeId h = layer_norm(tape, x, l.ln1_gain, l.ln1_bias);
    NodeId q = linear_nt(tape, h, l.wq, l.bq);
    NodeId k = linear_nt(tape, h, l.wk, l.bk);
    NodeId v = linear_nt(tape, h, l.wv, l.bv);
    std::vector<NodeId> heads;
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      const int c0 = hd * dh, c1 = (hd + 1) * dh;
      NodeId qh = tape.slice_cols(q, c0, c1);
      NodeId kh = tape.slice_cols(k, c0, c1);
      NodeId vh = tape.slice_cols(v, c0, c1);
      NodeId scores = tape.add(tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh), mask);
      NodeId probs = tape.softmax_rows(scores);
      heads.push_back(tape.matmul(probs, vh));
    }
    NodeId ctx = cfg.n_heads == 1 ? heads[0] : tape.concat_cols(heads);
    x = tape.add(x, linear_nt(tape, ctx, l.wo, l.bo));

    NodeId h2 = layer_norm(tape, x, l.ln2_gain, l.ln2_bias);
    NodeId key = tape.gelu(linear_nt(tape, h2, l.w_fc, l.b_fc));
    trace.mlp_key.push_back(key);
    NodeId mlp = linear_nt(tape, key, l.w_proj, l.b_proj);
    if (li == hook_layer && hook_delta >= 0) mlp = tape.add_at_row(mlp, hook_pos, hook_delta);
    trace.mlp_out.push_back(mlp);
    x = tape.add(x, mlp);
  }

  NodeId final = layer_norm(tape, x, nodes.lnf_gain, nodes.lnf_bias);
  trace.embedding = tape.select_row(final, seq - 1);
  return trace;
}

void validate_hook(const EncoderModel& m, const HookSpec& hook, int seq_len) {
  if (hook.layer < 0 || hook.layer >= m.cfg.n_layers)
    throw InvalidHook("layer " + std::to_string(hook.layer) + " outside [0, " +
                      std::to_string(m.cfg.n_layers) + ")");
  if (hook.pos < 0 || hook.pos >= seq_len)
    throw InvalidHook("token position " + std::to_string(hook.pos) + " outside sequence of length " +
                      std::to_string(seq_len));
  if (hook.delta.rows() != 1 || hook.delta.cols() != m.cfg.d_model)
    throw InvalidHook("delta must be 1 x d_model");
  if (!hook.delta.all_finite()) throw InvalidHook("delta must be finite");
}

Matrix encode(const EncoderModel& m, const Vocabulary& vocab, const std::string& prompt,
              const HookSpec* hook) {
  const std::vector<int> ids = vocab.tokenize(prompt);
  GradTape tape;
  const EncoderNodes nodes = bind_encoder(tape, m, false);
  int hook_layer = -1, hook_pos = -1;
  NodeId delta = -1;
  if (hook) {
    validate_hook(m, *hook, int(ids.size()));
    hook_layer = hook->layer;
    hook_pos = hook->pos;
    delta = tape.constant(hook->delta);
  }
  const EncodeTrace trace = encoder_forward(tape, nodes, ids, hook_layer, hook_pos, delta);
  return tape.value(trace.embedding);
}

int subject_position_in_prompt(const Vocabulary& vocab, const std::string& prompt,
                               const std::string& subject) {
  const std::vector<int> prompt_ids = vocab.tokenize(prompt);
  const std::vector<int> subject_ids = vocab.word_ids(subject);
  const int pos = last_subject_position(prompt_ids, subject_ids);
  if (pos < 0) throw SubjectNotFound("subject '" + subject + "' not in prompt '" + prompt + "'");
  return pos;
}

Matrix extract_key(const EncoderModel& m, const Vocabulary& vocab, int layer,
                   std::span<const std::string> prompts, const std::string& subject) {
  if (layer < 0 || layer >= m.cfg.n_layers)
    throw InvalidHook("extract_key: layer out of range");
  if (prompts.empty()) throw SubjectNotFound("extract_key: no prompts given");
  Matrix acc(1, m.cfg.d_ff);
  for (const std::string& prompt : prompts) {
    const int pos = subject_position_in_prompt(vocab, prompt, subject);
    const std::vector<int> ids = vocab.tokenize(prompt);
    GradTape tape;
    const EncoderNodes nodes = bind_encoder(tape, m, false);
    const EncodeTrace trace = encoder_forward(tape, nodes, ids);
    const Matrix& keys = tape.value(trace.mlp_key[layer]);
    for (int j = 0; j < m.cfg.d_ff; ++j) acc(0, j) += keys(pos, j);
  }
  return scale(acc, 1.0 / double(prompts.size()));
}

Matrix read_value(const EncoderModel& m, int layer, const Matrix& key) {
  if (layer < 0 || layer >= m.cfg.n_layers)
    throw InvalidHook("read_value: layer out of range");
  if (key.rows() != 1 || key.cols() != m.cfg.d_ff)
    throw DimensionMismatch("read_value: key must be 1 x d_ff");
  return matmul_nt(key, m.layers[layer].w_proj);
}

EncoderModel with_projection(const EncoderModel& m, int layer, Matrix w_proj) {
  if (layer < 0 || layer >= m.cfg.n_layers)
    throw InvalidHook("with_projection: layer out of range");
  if (w_proj.rows() != m.cfg.d_model || w_proj.cols() != m.cfg.d_ff)
    throw DimensionMismatch("with_projection: shape must be d_model x d_ff");
  EncoderModel out = m;
  out.layers[layer].w_proj = std::move(w_proj);
  return out;
}

}  // namespace emcid
