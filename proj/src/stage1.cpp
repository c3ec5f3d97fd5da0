#include "emcid/stage1.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

namespace emcid {

using nlohmann::json;

std::vector<EditRequest> load_edit_requests(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open requests file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw FormatError("requests parse error in " + path + ": " + e.what());
  }
  std::vector<EditRequest> out;
  for (const auto& r : doc.at("requests")) {
    EditRequest req;
    req.concept_id = r.at("id").get<std::string>();
    req.subject = r.at("subject").get<std::string>();
    req.source_prompts = r.at("source_prompts").get<std::vector<std::string>>();
    if (r.contains("dest_prompts"))
      req.dest_prompts = r.at("dest_prompts").get<std::vector<std::string>>();
    if (r.contains("dest_images")) {
      for (const auto& img : r.at("dest_images")) {
        std::vector<double> px = img.get<std::vector<double>>();
        if (int(px.size()) != kImagePixels)
          throw FormatError("dest image must have " + std::to_string(kImagePixels) + " values");
        req.dest_images.push_back(Matrix(1, kImagePixels, std::move(px)));
      }
    }
    if (r.contains("layers")) req.layers = r.at("layers").get<std::vector<int>>();
    req.dest_concept = r.value("dest_concept", std::string());
    out.push_back(std::move(req));
  }
  return out;
}

void save_edit_requests(const std::vector<EditRequest>& requests, const std::string& path) {
  json doc;
  doc["requests"] = json::array();
  for (const auto& r : requests) {
    json jr;
    jr["id"] = r.concept_id;
    jr["subject"] = r.subject;
    jr["source_prompts"] = r.source_prompts;
    if (!r.dest_prompts.empty()) jr["dest_prompts"] = r.dest_prompts;
    if (!r.dest_images.empty()) {
      json imgs = json::array();
      for (const auto& img : r.dest_images) {
        std::vector<double> px(img.data(), img.data() + img.size());
        imgs.push_back(px);
      }
      jr["dest_images"] = imgs;
    }
    if (!r.layers.empty()) jr["layers"] = r.layers;
    if (!r.dest_concept.empty()) jr["dest_concept"] = r.dest_concept;
    doc["requests"].push_back(jr);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write requests file: " + path);
  out << doc.dump(2) << "\n";
}

Objective objective_from_name(const std::string& name) {
  if (name == "hybrid") return Objective::Hybrid;
  if (name == "txt") return Objective::TextOnly;
  if (name == "noise") return Objective::NoiseOnly;
  throw ConfigError("unknown objective '" + name + "' (expected hybrid|txt|noise)");
}

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::Hybrid: return "hybrid";
    case Objective::TextOnly: return "txt";
    case Objective::NoiseOnly: return "noise";
  }
  return "hybrid";
}

namespace {

void validate_request(const EditRequest& r) {
  if (r.source_prompts.empty())
    throw ConfigError("edit request '" + r.concept_id + "' has no source prompts");
  const bool has_prompts = !r.dest_prompts.empty();
  const bool has_images = !r.dest_images.empty();
  if (has_prompts == has_images)
    throw ConfigError("edit request '" + r.concept_id +
                      "' needs exactly one destination kind (prompts xor images)");
  if (has_prompts && r.dest_prompts.size() != r.source_prompts.size())
    throw ConfigError("edit request '" + r.concept_id +
                      "' pairs source and destination prompts; list lengths differ");
}

}  // namespace

Stage1Context::Stage1Context(const EncoderModel& encoder, const DenoiserModel& denoiser,
                             const NoiseSchedule& schedule, const Vocabulary& vocab,
                             EditRequest request, Stage1Config config)
    : encoder_(encoder),
      denoiser_(denoiser),
      schedule_(schedule),
      vocab_(vocab),
      request_(std::move(request)),
      config_(config) {
  validate_request(request_);
  if (config_.steps <= 0 || config_.lr <= 0.0 || config_.lambda_s < 0.0)
    throw ConfigError("stage1 config: steps > 0, lr > 0, lambda_s >= 0 required");
  if (config_.noise_images < 1 || config_.noise_timesteps < 1)
    throw ConfigError("stage1 config: noise batch must be at least 1 x 1");

  for (const auto& p : request_.source_prompts) {
    subject_pos_.push_back(subject_position_in_prompt(vocab_, p, request_.subject));
    source_ids_.push_back(vocab_.tokenize(p));
  }

  if (!request_.image_destination()) {
    const int pairs = int(request_.dest_prompts.size());
    dest_emb_ = Matrix(pairs, encoder_.cfg.d_model);
    for (int j = 0; j < pairs; ++j) {
      const Matrix e = encode(encoder_, vocab_, request_.dest_prompts[j]);
      for (int c = 0; c < e.cols(); ++c) dest_emb_(j, c) = e(0, c);
    }
    // Base images for the noise loss: ancestral samples conditioned on the
    // destination prompts, drawn once per context.
    base_images_ = Matrix(config_.noise_images, kImagePixels);
    for (int i = 0; i < config_.noise_images; ++i) {
      Matrix cond(1, encoder_.cfg.d_model);
      for (int c = 0; c < cond.cols(); ++c) cond(0, c) = dest_emb_(i % pairs, c);
      const Matrix img = sample_image(denoiser_, schedule_, cond, schedule_.steps(),
                                      derive_seed(config_.seed, hash_string("dest-img"), i));
      for (int c = 0; c < kImagePixels; ++c) base_images_(i, c) = img(0, c);
    }
  } else {
    base_images_ = Matrix(int(request_.dest_images.size()), kImagePixels);
    for (int i = 0; i < base_images_.rows(); ++i) {
      if (request_.dest_images[i].cols() != kImagePixels)
        throw DimensionMismatch("destination image " + std::to_string(i) + " has wrong size");
      for (int c = 0; c < kImagePixels; ++c) base_images_(i, c) = request_.dest_images[i](0, c);
    }
  }
}

NoiseBatch Stage1Context::sample_batch(uint64_t seed) const {
  Rng rng(seed);
  const int rows = config_.noise_images * config_.noise_timesteps;
  const int T = schedule_.steps();
  NoiseBatch batch;
  batch.x_t = Matrix(rows, kImagePixels);
  batch.ts.resize(rows);
  batch.pair.resize(rows);
  Matrix eps(rows, kImagePixels);
  for (int r = 0; r < rows; ++r) {
    const int base = int(rng.below(uint64_t(base_images_.rows())));
    batch.ts[r] = 1 + int(rng.below(uint64_t(T)));
    batch.pair[r] = int(rng.below(uint64_t(request_.source_prompts.size())));
    Matrix noise(1, kImagePixels);
    for (int c = 0; c < kImagePixels; ++c) noise(0, c) = rng.normal();
    Matrix x0(1, kImagePixels);
    for (int c = 0; c < kImagePixels; ++c) x0(0, c) = base_images_(base, c);
    const Matrix noised = schedule_.add_noise(x0, batch.ts[r], noise);
    for (int c = 0; c < kImagePixels; ++c) {
      batch.x_t(r, c) = noised(0, c);
      eps(r, c) = noise(0, c);
    }
  }

  if (request_.image_destination()) {
    batch.targets = std::move(eps);
  } else {
    // Destination branch eps(x_t, E(p_hat), t), constant in delta. Rows are
    // grouped by pair to batch the denoiser.
    batch.targets = Matrix(rows, kImagePixels);
    const int pairs = int(request_.dest_prompts.size());
    for (int j = 0; j < pairs; ++j) {
      std::vector<int> rows_j;
      for (int r = 0; r < rows; ++r)
        if (batch.pair[r] == j) rows_j.push_back(r);
      if (rows_j.empty()) continue;
      Matrix x(int(rows_j.size()), kImagePixels);
      std::vector<int> ts(rows_j.size());
      for (size_t k = 0; k < rows_j.size(); ++k) {
        ts[k] = batch.ts[rows_j[k]];
        for (int c = 0; c < kImagePixels; ++c) x(int(k), c) = batch.x_t(rows_j[k], c);
      }
      Matrix cond(1, encoder_.cfg.d_model);
      for (int c = 0; c < cond.cols(); ++c) cond(0, c) = dest_emb_(j, c);
      const Matrix pred = predict_noise_batch(denoiser_, x, cond, ts);
      for (size_t k = 0; k < rows_j.size(); ++k)
        for (int c = 0; c < kImagePixels; ++c) batch.targets(rows_j[k], c) = pred(int(k), c);
    }
  }
  return batch;
}

namespace {

struct HookedEmbeddings {
  NodeId delta;
  std::vector<NodeId> embedding;  // per source prompt
};

HookedEmbeddings build_hooked_embeddings(GradTape& tape, const EncoderModel& model,
                                         const std::vector<std::vector<int>>& source_ids,
                                         const std::vector<int>& subject_pos, int layer,
                                         const Matrix& delta) {
  HookedEmbeddings out;
  const EncoderNodes nodes = bind_encoder(tape, model, false);
  out.delta = tape.leaf(delta);
  for (size_t i = 0; i < source_ids.size(); ++i) {
    const EncodeTrace trace =
        encoder_forward(tape, nodes, source_ids[i], layer, subject_pos[i], out.delta);
    out.embedding.push_back(trace.embedding);
  }
  return out;
}

}  // namespace

Stage1Context::Eval Stage1Context::objective_with_grad(int layer, const Matrix& delta,
                                                       const NoiseBatch* batch,
                                                       Objective objective) const {
  if (layer < 0 || layer >= encoder_.cfg.n_layers)
    throw InvalidHook("stage1: layer out of range");
  if (delta.rows() != 1 || delta.cols() != encoder_.cfg.d_model)
    throw InvalidHook("stage1: delta must be 1 x d_model");

  GradTape tape;
  const HookedEmbeddings hooked =
      build_hooked_embeddings(tape, encoder_, source_ids_, subject_pos_, layer, delta);
  const int prompts = int(source_ids_.size());

  NodeId txt_node = -1;
  if (!request_.image_destination()) {
    NodeId acc = -1;
    for (int j = 0; j < prompts; ++j) {
      Matrix target(1, encoder_.cfg.d_model);
      for (int c = 0; c < target.cols(); ++c) target(0, c) = dest_emb_(j, c);
      const NodeId term = tape.sum_sq(tape.sub(hooked.embedding[j], tape.constant(target)));
      acc = acc < 0 ? term : tape.add(acc, term);
    }
    txt_node = tape.scale(acc, 1.0 / prompts);
  }

  NodeId noise_node = -1;
  if (batch) {
    const DenoiserNodes den_nodes = bind_denoiser(tape, denoiser_, false);
    const int rows = batch->x_t.rows();
    NodeId acc = -1;
    for (int j = 0; j < prompts; ++j) {
      std::vector<int> rows_j;
      for (int r = 0; r < rows; ++r)
        if (batch->pair[r] == j) rows_j.push_back(r);
      if (rows_j.empty()) continue;
      Matrix x(int(rows_j.size()), kImagePixels);
      Matrix tgt(int(rows_j.size()), kImagePixels);
      std::vector<int> ts(rows_j.size());
      for (size_t k = 0; k < rows_j.size(); ++k) {
        ts[k] = batch->ts[rows_j[k]];
        for (int c = 0; c < kImagePixels; ++c) {
          x(int(k), c) = batch->x_t(rows_j[k], c);
          tgt(int(k), c) = batch->targets(rows_j[k], c);
        }
      }
      const NodeId pred = denoiser_forward(
          tape, den_nodes, tape.constant(x),
          tape.constant(time_embedding_batch(ts, denoiser_.cfg.t_dim)), hooked.embedding[j]);
      const NodeId term = tape.sum_sq(tape.sub(pred, tape.constant(tgt)));
      acc = acc < 0 ? term : tape.add(acc, term);
    }
    noise_node = tape.scale(acc, 1.0 / rows);
  }

  const Objective obj = request_.image_destination() ? Objective::NoiseOnly : objective;
  NodeId total = -1;
  switch (obj) {
    case Objective::TextOnly:
      total = txt_node;
      break;
    case Objective::NoiseOnly:
      total = noise_node;
      break;
    case Objective::Hybrid:
      if (noise_node < 0 || txt_node < 0)
        throw ConfigError("stage1: hybrid objective requires a noise batch and prompt destination");
      total = tape.add(noise_node, tape.scale(txt_node, config_.lambda_s));
      break;
  }
  if (total < 0) throw ConfigError("stage1: objective requires a noise batch");

  Eval eval;
  eval.value = tape.value(total)(0, 0);
  eval.breakdown.txt = txt_node >= 0 ? tape.value(txt_node)(0, 0) : 0.0;
  eval.breakdown.noise = noise_node >= 0 ? tape.value(noise_node)(0, 0) : 0.0;
  eval.breakdown.hybrid = eval.breakdown.noise + config_.lambda_s * eval.breakdown.txt;
  auto result = tape.backward(total, {hooked.delta});
  eval.grad = std::move(result.grads[0]);
  return eval;
}

double Stage1Context::loss_txt(int layer, const Matrix& delta) const {
  if (request_.image_destination())
    throw ConfigError("loss_txt requires a prompt destination");
  return objective_with_grad(layer, delta, nullptr, Objective::TextOnly).value;
}

double Stage1Context::loss_noise(int layer, const Matrix& delta, const NoiseBatch& batch) const {
  if (request_.image_destination())
    throw ConfigError("loss_noise requires a prompt destination");
  return objective_with_grad(layer, delta, &batch, Objective::NoiseOnly).value;
}

double Stage1Context::loss_image(int layer, const Matrix& delta, const NoiseBatch& batch) const {
  if (!request_.image_destination())
    throw ConfigError("loss_image requires an image destination");
  return objective_with_grad(layer, delta, &batch, Objective::NoiseOnly).value;
}

LayerEditPayload Stage1Context::optimize(int layer) const {
  if (layer < 0 || layer >= encoder_.cfg.n_layers)
    throw InvalidHook("optimize_value: layer out of range");
  const bool uses_txt =
      !request_.image_destination() && config_.objective != Objective::NoiseOnly;
  if (uses_txt && layer == encoder_.cfg.n_layers - 1)
    throw LastLayerWithTextLoss(
        "the [EOS] feature never attends back to the last layer's MLP output, so the text "
        "alignment loss has no gradient there; pick an earlier layer");
  const bool needs_batch =
      request_.image_destination() || config_.objective != Objective::TextOnly;

  Matrix delta(1, encoder_.cfg.d_model);
  loss_trace_.clear();
  const NoiseBatch fixed =
      needs_batch && !config_.resample_each_step
          ? sample_batch(derive_seed(config_.seed, hash_string("batch"), 0))
          : NoiseBatch{};

  for (int step = 0; step < config_.steps; ++step) {
    NoiseBatch batch;
    const NoiseBatch* batch_ptr = nullptr;
    if (needs_batch) {
      if (config_.resample_each_step) {
        batch = sample_batch(derive_seed(config_.seed, hash_string("batch"), uint64_t(step)));
        batch_ptr = &batch;
      } else {
        batch_ptr = &fixed;
      }
    }
    const Eval eval = objective_with_grad(layer, delta, batch_ptr, config_.objective);
    if (!std::isfinite(eval.value))
      throw DivergedOptimization("stage1 loss non-finite at step " + std::to_string(step));
    loss_trace_.push_back(eval.value);
    for (int c = 0; c < delta.cols(); ++c) delta(0, c) -= config_.lr * eval.grad(0, c);
    if (!delta.all_finite())
      throw DivergedOptimization("stage1 delta non-finite at step " + std::to_string(step));
  }

  // Final bookkeeping on a common held-out batch: guarantees the payload is
  // never worse than the zero offset it started from.
  NoiseBatch eval_batch;
  const NoiseBatch* eval_ptr = nullptr;
  if (needs_batch) {
    eval_batch = sample_batch(derive_seed(config_.seed, hash_string("eval-batch")));
    eval_ptr = &eval_batch;
  }
  const Eval final_eval = objective_with_grad(layer, delta, eval_ptr, config_.objective);
  const Eval zero_eval =
      objective_with_grad(layer, Matrix(1, encoder_.cfg.d_model), eval_ptr, config_.objective);
  LayerEditPayload payload;
  payload.concept_id = request_.concept_id;
  payload.layer = layer;
  if (final_eval.value <= zero_eval.value) {
    payload.delta = delta;
    payload.final_loss = final_eval.breakdown;
  } else {
    payload.delta = Matrix(1, encoder_.cfg.d_model);
    payload.final_loss = zero_eval.breakdown;
  }
  payload.key = extract_key(encoder_, vocab_, layer, request_.source_prompts, request_.subject);
  payload.value = read_value(encoder_, layer, payload.key);
  payload.new_value = add(payload.value, payload.delta);
  return payload;
}

LayerEditPayload optimize_value(const EncoderModel& encoder, const DenoiserModel& denoiser,
                                const NoiseSchedule& schedule, const Vocabulary& vocab,
                                const EditRequest& request, int layer,
                                const Stage1Config& config) {
  Stage1Context ctx(encoder, denoiser, schedule, vocab, request, config);
  return ctx.optimize(layer);
}

}  // namespace emcid
