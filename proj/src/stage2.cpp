#include "emcid/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "emcid/csv.hpp"
#include "emcid/workers.hpp"

namespace emcid {

std::map<int, CovarianceStats> estimate_covariances(const EncoderModel& model,
                                                    const Vocabulary& vocab,
                                                    const std::vector<std::string>& corpus,
                                                    const std::vector<int>& layers, double lambda,
                                                    int workers) {
  if (corpus.empty()) throw EmptyCorpus("covariance estimation needs a non-empty corpus");
  for (int layer : layers)
    if (layer < 0 || layer >= model.cfg.n_layers)
      throw InvalidHook("estimate_covariance: layer out of range");

  // One shard per prompt; merged in prompt order so the result does not
  // depend on the worker count.
  std::vector<std::vector<Matrix>> shard_sums(corpus.size());
  std::vector<long> shard_counts(corpus.size(), 0);
  parallel_for(int(corpus.size()), workers, [&](int i) {
    const std::vector<int> ids = vocab.tokenize(corpus[i]);
    GradTape tape;
    const EncoderNodes nodes = bind_encoder(tape, model, false);
    const EncodeTrace trace = encoder_forward(tape, nodes, ids);
    std::vector<Matrix> sums;
    for (int layer : layers) {
      const Matrix& keys = tape.value(trace.mlp_key[layer]);
      Matrix sum(model.cfg.d_ff, model.cfg.d_ff);
      for (int r = 0; r < keys.rows(); ++r) {
        const double* k = keys.row(r);
        for (int a = 0; a < keys.cols(); ++a) {
          const double ka = k[a];
          double* row = sum.row(a);
          for (int b = 0; b < keys.cols(); ++b) row[b] += ka * k[b];
        }
      }
      sums.push_back(std::move(sum));
    }
    shard_sums[i] = std::move(sums);
    shard_counts[i] = long(ids.size());
  });

  std::map<int, CovarianceStats> out;
  for (size_t li = 0; li < layers.size(); ++li) {
    CovarianceStats stats;
    stats.layer = layers[li];
    stats.lambda = lambda;
    stats.second_moment = Matrix(model.cfg.d_ff, model.cfg.d_ff);
    for (size_t i = 0; i < corpus.size(); ++i) {
      stats.second_moment = add(stats.second_moment, shard_sums[i][li]);
      stats.samples += shard_counts[i];
    }
    stats.second_moment = scale(stats.second_moment, 1.0 / double(stats.samples));
    out.emplace(stats.layer, std::move(stats));
  }
  return out;
}

CovarianceStats estimate_covariance(const EncoderModel& model, const Vocabulary& vocab,
                                    const std::vector<std::string>& corpus, int layer,
                                    double lambda, int workers) {
  auto all = estimate_covariances(model, vocab, corpus, {layer}, lambda, workers);
  return std::move(all.at(layer));
}

CovarianceStats covariance_from_keys(const Matrix& keys, int layer, double lambda) {
  if (keys.rows() < 1) throw EmptyCorpus("covariance_from_keys: no keys");
  CovarianceStats stats;
  stats.layer = layer;
  stats.lambda = lambda;
  stats.samples = keys.rows();
  stats.second_moment = scale(matmul_tn(keys, keys), 1.0 / double(keys.rows()));
  return stats;
}

namespace {

double cholesky_condition_estimate(const Matrix& l) {
  double lo = l(0, 0), hi = l(0, 0);
  for (int i = 1; i < l.rows(); ++i) {
    lo = std::min(lo, l(i, i));
    hi = std::max(hi, l(i, i));
  }
  return (hi * hi) / (lo * lo);
}

}  // namespace

Matrix closed_form_update(const Matrix& w0, const Matrix& c0, const Matrix& k1, const Matrix& v1,
                          double alpha, EditReportEntry* entry) {
  const int d_ff = w0.cols();
  const int d_model = w0.rows();
  if (c0.rows() != d_ff || c0.cols() != d_ff)
    throw DimensionMismatch("closed_form_update: C0 must be d_ff x d_ff");
  if (k1.rows() != d_ff) throw DimensionMismatch("closed_form_update: K1 must be d_ff x e");
  if (v1.rows() != d_model || v1.cols() != k1.cols())
    throw DimensionMismatch("closed_form_update: V1* must be d_model x e");

  // bracket = (1-alpha) C0 + alpha K1 K1^T
  Matrix bracket = scale(c0, 1.0 - alpha);
  matmul_nt_acc(bracket, k1, k1, alpha);

  Matrix l;
  try {
    l = cholesky(bracket);
  } catch (const NotPositiveDefinite& e) {
    throw SingularBracket(std::string("(1-alpha) C0 + alpha K1 K1^T is not PD: ") + e.what());
  }

  const Matrix residual = sub(v1, matmul(w0, k1));        // d_model x e
  const Matrix y = solve_spd(bracket, k1);                // bracket^{-1} K1, d_ff x e
  Matrix w_star = w0;
  matmul_nt_acc(w_star, residual, y, alpha);              // W0 + alpha R (bracket^{-1} K1)^T

  if (entry) {
    const Matrix delta = sub(w_star, w0);
    entry->frob_delta = frobenius_norm(delta);
    const Matrix post_residual = sub(matmul(w_star, k1), v1);
    entry->edit_residual = frobenius_norm(post_residual);
    entry->pre_edit_residual = frobenius_norm(residual);
    // Optimality: (1-alpha)(W*-W0) C0 + alpha (W* K1 - V1*) K1^T = 0.
    Matrix stat = matmul(scale(delta, 1.0 - alpha), c0);
    matmul_nt_acc(stat, post_residual, k1, alpha);
    const double scale_ref = 1.0 + frobenius_norm(matmul(delta, c0)) +
                             frobenius_norm(matmul_nt(post_residual, k1));
    entry->stationarity = frobenius_norm(stat) / scale_ref;
    entry->cond_estimate = cholesky_condition_estimate(l);
  }
  return w_star;
}

std::pair<EncoderModel, EditReport> edit_model(const EncoderModel& model, const Vocabulary& vocab,
                                               const std::vector<LayerEditPayload>& payloads,
                                               const std::vector<EditRequest>& requests,
                                               const EditPlan& plan,
                                               const std::map<int, CovarianceStats>& covariances) {
  if (!(plan.alpha > 0.0 && plan.alpha < 1.0))
    throw ConfigError("edit plan: alpha must lie in (0, 1)");
  if (plan.layer_lo < 0 || plan.layer_hi >= model.cfg.n_layers - 1 || plan.layer_lo > plan.layer_hi)
    throw ConfigError("edit plan: layer range must satisfy 0 <= lo <= hi < n_layers - 1");

  EncoderModel edited = model;
  EditReport report;
  if (payloads.empty()) return {edited, report};

  // Gather concepts and check the payload grid is complete.
  std::vector<std::string> concept_order;
  std::set<std::string> seen;
  for (const auto& p : payloads)
    if (seen.insert(p.concept_id).second) concept_order.push_back(p.concept_id);
  auto payload_for = [&](const std::string& id, int layer) -> const LayerEditPayload& {
    for (const auto& p : payloads)
      if (p.concept_id == id && p.layer == layer) return p;
    throw MissingPayload("no stage-I payload for concept '" + id + "' at layer " +
                         std::to_string(layer));
  };
  auto request_for = [&](const std::string& id) -> const EditRequest& {
    for (const auto& r : requests)
      if (r.concept_id == id) return r;
    throw MissingPayload("key recomputation needs the edit request for concept '" + id + "'");
  };

  const int e = int(concept_order.size());
  for (int layer = plan.layer_lo; layer <= plan.layer_hi; ++layer) {
    auto cov = covariances.find(layer);
    if (cov == covariances.end())
      throw MissingCovariance("no covariance stats for layer " + std::to_string(layer));

    Matrix k1(model.cfg.d_ff, e);
    Matrix v1(model.cfg.d_model, e);
    for (int j = 0; j < e; ++j) {
      const LayerEditPayload& p = payload_for(concept_order[j], layer);
      Matrix key = p.key;
      if (plan.recompute_keys) {
        const EditRequest& r = request_for(concept_order[j]);
        key = extract_key(edited, vocab, layer, r.source_prompts, r.subject);
      }
      for (int i = 0; i < model.cfg.d_ff; ++i) k1(i, j) = key(0, i);
      for (int i = 0; i < model.cfg.d_model; ++i) v1(i, j) = p.new_value(0, i);
    }

    EditReportEntry entry;
    entry.layer = layer;
    const Matrix w_star =
        closed_form_update(edited.layers[layer].w_proj, cov->second.c0(), k1, v1, plan.alpha,
                           &entry);
    edited = with_projection(edited, layer, w_star);
    report.entries.push_back(entry);
  }
  return {edited, report};
}

std::string EditReport::to_csv() const {
  std::ostringstream out;
  out << "layer,frob_delta,edit_residual,pre_edit_residual,stationarity,cond_estimate\n";
  for (const auto& e : entries) {
    out << e.layer << ',' << format_double(e.frob_delta) << ',' << format_double(e.edit_residual)
        << ',' << format_double(e.pre_edit_residual) << ',' << format_double(e.stationarity)
        << ',' << format_double(e.cond_estimate) << '\n';
  }
  return out.str();
}

std::vector<AlphaSweepRow> alpha_sweep_instance(const Matrix& w0, const Matrix& c0,
                                                const Matrix& k1, const Matrix& v1,
                                                const std::vector<double>& alphas,
                                                const Matrix* k0) {
  std::vector<AlphaSweepRow> rows;
  for (double alpha : alphas) {
    if (!(alpha > 0.0 && alpha < 1.0))
      throw ConfigError("alpha sweep: alpha values must lie in (0, 1)");
    EditReportEntry entry;
    const Matrix w_star = closed_form_update(w0, c0, k1, v1, alpha, &entry);
    const Matrix delta = sub(w_star, w0);
    AlphaSweepRow row;
    row.alpha = alpha;
    row.edit_residual = entry.edit_residual;
    if (k0) {
      row.preservation_residual = frobenius_norm(matmul(delta, *k0));
    } else {
      const Matrix dc = matmul(delta, c0);
      row.preservation_residual = std::sqrt(std::max(0.0, dot(dc, delta)));
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<AlphaSweepRow> alpha_sweep(const EncoderModel& model, const Vocabulary& vocab,
                                       const std::vector<LayerEditPayload>& payloads,
                                       const std::map<int, CovarianceStats>& covariances,
                                       const EditPlan& plan, const std::vector<double>& alphas) {
  (void)vocab;
  std::vector<std::string> concept_order;
  std::set<std::string> seen;
  for (const auto& p : payloads)
    if (seen.insert(p.concept_id).second) concept_order.push_back(p.concept_id);
  const int e = int(concept_order.size());
  if (e == 0) return {};

  std::vector<AlphaSweepRow> acc(alphas.size());
  int layer_count = 0;
  for (int layer = plan.layer_lo; layer <= plan.layer_hi; ++layer) {
    auto cov = covariances.find(layer);
    if (cov == covariances.end())
      throw MissingCovariance("no covariance stats for layer " + std::to_string(layer));
    Matrix k1(model.cfg.d_ff, e);
    Matrix v1(model.cfg.d_model, e);
    for (int j = 0; j < e; ++j) {
      const LayerEditPayload* found = nullptr;
      for (const auto& p : payloads)
        if (p.concept_id == concept_order[j] && p.layer == layer) found = &p;
      if (!found)
        throw MissingPayload("no stage-I payload for concept '" + concept_order[j] +
                             "' at layer " + std::to_string(layer));
      for (int i = 0; i < model.cfg.d_ff; ++i) k1(i, j) = found->key(0, i);
      for (int i = 0; i < model.cfg.d_model; ++i) v1(i, j) = found->new_value(0, i);
    }
    const auto rows = alpha_sweep_instance(model.layers[layer].w_proj, cov->second.c0(), k1, v1,
                                           alphas, nullptr);
    for (size_t i = 0; i < rows.size(); ++i) {
      acc[i].alpha = rows[i].alpha;
      acc[i].edit_residual += rows[i].edit_residual;
      acc[i].preservation_residual += rows[i].preservation_residual;
    }
    ++layer_count;
  }
  for (auto& row : acc) {
    row.edit_residual /= layer_count;
    row.preservation_residual /= layer_count;
  }
  return acc;
}

}  // namespace emcid
