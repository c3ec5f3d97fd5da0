#include "emcid/training.hpp"

#include <cmath>

namespace emcid {

AdamOptimizer::AdamOptimizer(std::vector<Matrix*> params, double lr, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Matrix* p : params_) {
    m_.emplace_back(p->rows(), p->cols());
    v_.emplace_back(p->rows(), p->cols());
  }
}

void AdamOptimizer::step(const std::vector<Matrix>& grads) {
  if (grads.size() != params_.size())
    throw DimensionMismatch("adam: gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Matrix& p = *params_[i];
    const Matrix& g = grads[i];
    double* pd = p.data();
    double* md = m_[i].data();
    double* vd = v_[i].data();
    const double* gd = g.data();
    for (size_t j = 0; j < p.size(); ++j) {
      md[j] = beta1_ * md[j] + (1.0 - beta1_) * gd[j];
      vd[j] = beta2_ * vd[j] + (1.0 - beta2_) * gd[j] * gd[j];
      pd[j] -= lr_ * (md[j] / bc1) / (std::sqrt(vd[j] / bc2) + eps_);
    }
  }
}

namespace {

struct TrainItem {
  std::vector<int> ids;
  std::vector<int> class_indices;
  std::vector<double> class_probs;  // same length; sums to 1
};

struct RenderParams {
  ShapeKind shape;
  ColorSpec color;
};

struct TrainingSet {
  std::vector<TrainItem> items;
  std::vector<RenderParams> render;  // per registry concept
};

TrainingSet build_training_set(const Vocabulary& vocab, const ConceptRegistry& registry) {
  TrainingSet set;
  for (const auto& c : registry.concepts)
    set.render.push_back({shape_from_name(c.shape), color_from_name(c.color)});

  auto push_single = [&](const std::string& prompt, int class_index) {
    set.items.push_back({vocab.tokenize(prompt), {class_index}, {1.0}});
  };

  for (size_t ci = 0; ci < registry.concepts.size(); ++ci) {
    const auto& c = registry.concepts[ci];
    for (const auto& p : c.templates) push_single(p, int(ci));
    for (const auto& p : c.paraphrases) push_single(p, int(ci));
    // Alias prompts bind to alias_bound_to: the engineered misunderstood
    // aliases learn a wrong class here on purpose.
    const int bound = registry.index_of(c.alias_bound_to.empty() ? c.id : c.alias_bound_to);
    for (int ai = 0; ai < int(c.aliases.size()); ++ai) {
      for (PromptTier tier : {PromptTier::Template, PromptTier::Paraphrase})
        for (const auto& p : registry.alias_prompts(c.id, ai, tier)) push_single(p, bound);
    }
  }
  for (const auto& b : registry.bare_subjects) {
    std::vector<int> classes;
    for (const auto& id : b.attribute_ids) classes.push_back(registry.index_of(id));
    for (const auto& p : b.prompts)
      set.items.push_back({vocab.tokenize(p), classes, b.train_ratios});
  }
  if (set.items.empty()) throw ConfigError("registry yields an empty training set");
  return set;
}

int sample_class(const TrainItem& item, Rng& rng) {
  if (item.class_indices.size() == 1) return item.class_indices[0];
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < item.class_indices.size(); ++i) {
    acc += item.class_probs[i];
    if (u < acc) return item.class_indices[i];
  }
  return item.class_indices.back();
}

Matrix class_prototypes(int classes, int dim, uint64_t seed) {
  Rng rng(seed);
  Matrix protos = rng.normal_matrix(classes, dim);
  for (int i = 0; i < classes; ++i) {
    double norm = 0.0;
    for (int j = 0; j < dim; ++j) norm += protos(i, j) * protos(i, j);
    norm = std::sqrt(norm);
    for (int j = 0; j < dim; ++j) protos(i, j) /= norm;
  }
  return protos;
}

}  // namespace

TrainedModels train_models(const Vocabulary& vocab, const ConceptRegistry& registry,
                           const EncoderConfig& enc_cfg, const DenoiserConfig& den_cfg,
                           const NoiseSchedule& schedule, const TrainConfig& cfg, uint64_t seed) {
  const TrainingSet set = build_training_set(vocab, registry);
  Rng init_rng(derive_seed(seed, hash_string("init")));
  TrainedModels out;
  out.encoder = init_encoder(enc_cfg, vocab.size(), init_rng);
  out.denoiser = init_denoiser(den_cfg, init_rng);
  const Matrix protos =
      class_prototypes(int(registry.concepts.size()), enc_cfg.d_model,
                       derive_seed(seed, hash_string("protos")));
  // Prototype logits get a mild temperature so gradients stay useful once
  // embeddings grow.
  const double proto_scale = 2.0;

  std::vector<Matrix*> enc_params;  // bound per step below
  {
    // Parameter order must match bind order: encoder leaves then denoiser.
    enc_params = encoder_params(out.encoder);
  }
  std::vector<Matrix*> all_params = enc_params;
  for (Matrix* p : denoiser_params(out.denoiser)) all_params.push_back(p);
  AdamOptimizer adam(all_params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  Rng data_rng(derive_seed(seed, hash_string("data")));
  const int T = schedule.steps();

  for (int step = 0; step < cfg.steps; ++step) {
    GradTape tape;
    const EncoderNodes enc_nodes = bind_encoder(tape, out.encoder, true);
    const DenoiserNodes den_nodes = bind_denoiser(tape, out.denoiser, true);
    const NodeId protos_node = tape.constant(protos);

    Matrix x_t(cfg.batch, den_cfg.x_dim);
    Matrix eps(cfg.batch, den_cfg.x_dim);
    std::vector<int> ts(cfg.batch);
    std::vector<int> targets(cfg.batch);
    std::vector<NodeId> embeddings(cfg.batch);

    for (int b = 0; b < cfg.batch; ++b) {
      const TrainItem& item = set.items[data_rng.below(set.items.size())];
      const int cls = sample_class(item, data_rng);
      targets[b] = cls;
      const Matrix x0 = render_sample(set.render[cls].shape, set.render[cls].color, data_rng);
      ts[b] = 1 + int(data_rng.below(uint64_t(T)));
      Matrix noise(1, den_cfg.x_dim);
      for (int j = 0; j < den_cfg.x_dim; ++j) noise(0, j) = data_rng.normal();
      const Matrix noised = schedule.add_noise(x0, ts[b], noise);
      for (int j = 0; j < den_cfg.x_dim; ++j) {
        x_t(b, j) = noised(0, j);
        eps(b, j) = noise(0, j);
      }
      embeddings[b] = encoder_forward(tape, enc_nodes, item.ids).embedding;
    }

    const NodeId cond = tape.concat_rows(embeddings);
    const NodeId pred = denoiser_forward(tape, den_nodes, tape.constant(x_t),
                                         tape.constant(time_embedding_batch(ts, den_cfg.t_dim)),
                                         cond);
    const NodeId denoise_loss =
        tape.scale(tape.sum_sq(tape.sub(pred, tape.constant(eps))),
                   1.0 / double(cfg.batch * den_cfg.x_dim));
    const NodeId logits = tape.scale(tape.matmul_nt(cond, protos_node), proto_scale);
    const NodeId contrast_loss = tape.cross_entropy_rows(logits, targets);
    const NodeId total =
        tape.add(denoise_loss, tape.scale(contrast_loss, cfg.contrast_weight));

    const double loss_value = tape.value(total)(0, 0);
    if (!std::isfinite(loss_value))
      throw DivergedTraining("joint training loss non-finite at step " + std::to_string(step));
    out.loss_trace.push_back(loss_value);
    out.final_denoise_loss = tape.value(denoise_loss)(0, 0);
    out.final_contrast_loss = tape.value(contrast_loss)(0, 0);

    std::vector<NodeId> leaves = enc_nodes.leaves;
    for (NodeId id : den_nodes.leaves) leaves.push_back(id);
    auto result = tape.backward(total, leaves);
    adam.step(result.grads);
  }
  return out;
}

DenoiserTrainResult train_denoiser(const std::vector<std::pair<Matrix, std::string>>& dataset,
                                   const EncoderModel& encoder, const Vocabulary& vocab,
                                   const NoiseSchedule& schedule, const DenoiserConfig& den_cfg,
                                   const TrainConfig& cfg, uint64_t seed) {
  if (dataset.empty()) throw ConfigError("train_denoiser: empty dataset");
  // Embeddings are fixed; compute them once per distinct prompt.
  std::vector<Matrix> conds;
  conds.reserve(dataset.size());
  for (const auto& [img, prompt] : dataset) {
    if (img.rows() != 1 || img.cols() != den_cfg.x_dim)
      throw DimensionMismatch("train_denoiser: image must be 1 x x_dim");
    conds.push_back(encode(encoder, vocab, prompt));
  }

  Rng init_rng(derive_seed(seed, hash_string("denoiser-init")));
  DenoiserTrainResult out{init_denoiser(den_cfg, init_rng), 0.0, {}};
  AdamOptimizer adam(denoiser_params(out.model), cfg.lr, cfg.adam_beta1, cfg.adam_beta2,
                     cfg.adam_eps);
  Rng data_rng(derive_seed(seed, hash_string("denoiser-data")));
  const int T = schedule.steps();

  for (int step = 0; step < cfg.steps; ++step) {
    Matrix x_t(cfg.batch, den_cfg.x_dim);
    Matrix eps(cfg.batch, den_cfg.x_dim);
    Matrix cond(cfg.batch, den_cfg.c_dim);
    std::vector<int> ts(cfg.batch);
    for (int b = 0; b < cfg.batch; ++b) {
      const size_t pick = data_rng.below(dataset.size());
      ts[b] = 1 + int(data_rng.below(uint64_t(T)));
      Matrix noise(1, den_cfg.x_dim);
      for (int j = 0; j < den_cfg.x_dim; ++j) noise(0, j) = data_rng.normal();
      const Matrix noised = schedule.add_noise(dataset[pick].first, ts[b], noise);
      for (int j = 0; j < den_cfg.x_dim; ++j) {
        x_t(b, j) = noised(0, j);
        eps(b, j) = noise(0, j);
      }
      for (int j = 0; j < den_cfg.c_dim; ++j) cond(b, j) = conds[pick](0, j);
    }

    GradTape tape;
    const DenoiserNodes nodes = bind_denoiser(tape, out.model, true);
    const NodeId pred = denoiser_forward(tape, nodes, tape.constant(x_t),
                                         tape.constant(time_embedding_batch(ts, den_cfg.t_dim)),
                                         tape.constant(cond));
    const NodeId loss = tape.scale(tape.sum_sq(tape.sub(pred, tape.constant(eps))),
                                   1.0 / double(cfg.batch * den_cfg.x_dim));
    const double loss_value = tape.value(loss)(0, 0);
    if (!std::isfinite(loss_value))
      throw DivergedTraining("denoiser loss non-finite at step " + std::to_string(step));
    out.loss_trace.push_back(loss_value);
    auto result = tape.backward(loss, nodes.leaves);
    adam.step(result.grads);
  }
  out.final_loss = smoothed_tail_loss(out.loss_trace, 25);
  return out;
}

double smoothed_tail_loss(const std::vector<double>& trace, int window) {
  if (trace.empty()) return 0.0;
  const int n = std::min<int>(window, int(trace.size()));
  double s = 0.0;
  for (int i = int(trace.size()) - n; i < int(trace.size()); ++i) s += trace[i];
  return s / n;
}

}  // namespace emcid
