#include "emcid/bench.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>
#include <sstream>

#include "emcid/csv.hpp"
#include "emcid/workers.hpp"

namespace emcid {

Matrix ConfidenceOracle::class_probs(const Matrix& image) const {
  if (image.rows() != 1 || image.cols() != kImagePixels)
    throw DimensionMismatch("oracle: image must be 1 x " + std::to_string(kImagePixels));
  const Matrix img = clamp_image(image);
  const int c = int(prototypes.size());
  Matrix logits(1, c);
  for (int i = 0; i < c; ++i) {
    double mse = 0.0;
    const double* a = img.data();
    const double* b = prototypes[i].data();
    for (int j = 0; j < kImagePixels; ++j) {
      const double d = a[j] - b[j];
      mse += d * d;
    }
    logits(0, i) = -tau * (mse / kImagePixels);
  }
  double hi = logits(0, 0);
  for (int i = 1; i < c; ++i) hi = std::max(hi, logits(0, i));
  double z = 0.0;
  for (int i = 0; i < c; ++i) {
    logits(0, i) = std::exp(logits(0, i) - hi);
    z += logits(0, i);
  }
  for (int i = 0; i < c; ++i) logits(0, i) /= z;
  return logits;
}

int ConfidenceOracle::classify(const Matrix& image) const {
  const Matrix probs = class_probs(image);
  int best = 0;
  for (int i = 1; i < probs.cols(); ++i)
    if (probs(0, i) > probs(0, best)) best = i;
  return best;
}

int ConfidenceOracle::index_of(const std::string& id) const {
  for (size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return int(i);
  throw UnknownConcept("'" + id + "' is not known to the oracle");
}

ConfidenceOracle make_oracle(const ConceptRegistry& registry, double tau) {
  ConfidenceOracle oracle;
  oracle.tau = tau;
  for (const auto& c : registry.concepts) {
    oracle.ids.push_back(c.id);
    oracle.prototypes.push_back(registry.prototype(c.id));
  }
  return oracle;
}

namespace {

uint64_t tier_tag(PromptTier tier, int alias_index) {
  const uint64_t base = tier == PromptTier::Template ? hash_string("template")
                                                     : hash_string("paraphrase");
  return alias_index < 0 ? base : derive_seed(base, hash_string("alias"), uint64_t(alias_index));
}

Matrix mean_probs_over_prompts(const ModelPair& models, const NoiseSchedule& schedule,
                               const Vocabulary& vocab, const ConfidenceOracle& oracle,
                               const std::vector<std::string>& prompts, int n_per_prompt,
                               uint64_t cell_seed) {
  if (n_per_prompt < 1) throw ConfigError("sampling: n per prompt must be >= 1");
  Matrix acc(1, int(oracle.ids.size()));
  long count = 0;
  for (size_t j = 0; j < prompts.size(); ++j) {
    const Matrix cond = encode(models.encoder, vocab, prompts[j]);
    const uint64_t prompt_seed = derive_seed(cell_seed, hash_string("prompt"), uint64_t(j));
    const Matrix imgs =
        sample_images(models.denoiser, schedule, cond, n_per_prompt, schedule.steps(), prompt_seed);
    for (int i = 0; i < imgs.rows(); ++i) {
      Matrix img(1, kImagePixels);
      for (int c = 0; c < kImagePixels; ++c) img(0, c) = imgs(i, c);
      acc = add(acc, oracle.class_probs(img));
      ++count;
    }
  }
  return scale(acc, 1.0 / double(count));
}

}  // namespace

Matrix cell_mean_probs(const ModelPair& models, const NoiseSchedule& schedule,
                       const Vocabulary& vocab, const ConfidenceOracle& oracle,
                       const ConceptRegistry& registry, const std::string& concept_id,
                       PromptTier tier, int alias_index, int n_per_prompt, uint64_t seed) {
  const std::vector<std::string> prompts =
      alias_index < 0 ? registry.prompts(concept_id, tier)
                      : registry.alias_prompts(concept_id, alias_index, tier);
  const uint64_t cell_seed =
      derive_seed(seed, hash_string(concept_id), tier_tag(tier, alias_index));
  return mean_probs_over_prompts(models, schedule, vocab, oracle, prompts, n_per_prompt,
                                 cell_seed);
}

double gen_confidence(const ModelPair& models, const NoiseSchedule& schedule,
                      const Vocabulary& vocab, const ConfidenceOracle& oracle,
                      const ConceptRegistry& registry, const std::string& concept_a,
                      const std::string& concept_b, PromptTier tier, int n_per_prompt,
                      uint64_t seed) {
  registry.index_of(concept_b);
  const int a_idx = oracle.index_of(concept_a);
  const Matrix probs = cell_mean_probs(models, schedule, vocab, oracle, registry, concept_b, tier,
                                       -1, n_per_prompt, seed);
  return probs(0, a_idx);
}

namespace {

struct CellRequest {
  std::string concept_id;
  PromptTier tier;
  int alias_index;  // -1 for canonical prompts
  const std::vector<std::string>* custom_prompts = nullptr;
  uint64_t custom_tag = 0;
};

// Evaluates all cells for both models in parallel, indexed deterministically.
struct CellTable {
  std::vector<Matrix> pre, post;

  static CellTable build(const ModelPair& pre_models, const ModelPair& post_models,
                         const NoiseSchedule& schedule, const Vocabulary& vocab,
                         const ConfidenceOracle& oracle, const ConceptRegistry& registry,
                         const std::vector<CellRequest>& cells, int n_per_prompt,
                         const SamplingConfig& cfg) {
    CellTable table;
    table.pre.resize(cells.size());
    table.post.resize(cells.size());
    parallel_for(int(cells.size()) * 2, cfg.workers, [&](int task) {
      const int idx = task / 2;
      const bool is_post = task % 2 == 1;
      const ModelPair& models = is_post ? post_models : pre_models;
      const CellRequest& cell = cells[idx];
      Matrix result;
      if (cell.custom_prompts) {
        const uint64_t cell_seed = derive_seed(cfg.seed, cell.custom_tag,
                                               tier_tag(cell.tier, cell.alias_index));
        result = mean_probs_over_prompts(models, schedule, vocab, oracle, *cell.custom_prompts,
                                         n_per_prompt, cell_seed);
      } else {
        result = cell_mean_probs(models, schedule, vocab, oracle, registry, cell.concept_id,
                                 cell.tier, cell.alias_index, n_per_prompt, cfg.seed);
      }
      (is_post ? table.post : table.pre)[idx] = std::move(result);
    });
    return table;
  }
};

int per_prompt_budget(int images_per_cell, int n_prompts) {
  return std::max(1, images_per_cell / std::max(1, n_prompts));
}

}  // namespace

MetricsReport compute_metrics(const ModelPair& pre, const ModelPair& post,
                              const NoiseSchedule& schedule, const Vocabulary& vocab,
                              const std::vector<EditPairSpec>& edits,
                              const ConceptRegistry& registry, const ConfidenceOracle& oracle,
                              const SamplingConfig& cfg) {
  std::set<std::string> sources, dests;
  for (const auto& e : edits) {
    registry.index_of(e.source_id);
    registry.index_of(e.dest_id);
    sources.insert(e.source_id);
    dests.insert(e.dest_id);
  }
  std::vector<std::string> holdout;
  for (const auto& c : registry.concepts)
    if (!sources.count(c.id) && !dests.count(c.id)) holdout.push_back(c.id);
  if (!edits.empty() && holdout.empty())
    throw NoHoldoutConcepts("every registered concept is a source or destination");

  const int n_prompts = edits.empty() ? 1 : int(registry.prompts(edits[0].source_id,
                                                                 PromptTier::Template).size());
  const int n_per_prompt = per_prompt_budget(cfg.images_per_cell, n_prompts);

  // Cell list: per edit source, template + paraphrase + alias paraphrase;
  // per holdout concept, paraphrase.
  std::vector<CellRequest> cells;
  std::map<std::pair<std::string, int>, int> cell_index;  // (concept, kind) -> index
  auto add_cell = [&](const std::string& id, PromptTier tier, int alias_index, int kind) {
    const auto key = std::make_pair(id, kind);
    if (cell_index.count(key)) return;
    cell_index[key] = int(cells.size());
    cells.push_back({id, tier, alias_index, nullptr, 0});
  };
  for (const auto& e : edits) {
    add_cell(e.source_id, PromptTier::Template, -1, 0);
    add_cell(e.source_id, PromptTier::Paraphrase, -1, 1);
    if (!registry.get(e.source_id).aliases.empty())
      add_cell(e.source_id, PromptTier::Paraphrase, 0, 2);
  }
  for (const auto& h : holdout) add_cell(h, PromptTier::Paraphrase, -1, 1);

  const CellTable table =
      CellTable::build(pre, post, schedule, vocab, oracle, registry, cells, n_per_prompt, cfg);

  auto probs_at = [&](bool post_model, const std::string& id, int kind) -> const Matrix& {
    return (post_model ? table.post : table.pre)[cell_index.at({id, kind})];
  };

  MetricsReport report;
  report.images_per_cell = n_per_prompt * n_prompts;
  report.seed = cfg.seed;

  for (const auto& e : edits) {
    const int s_idx = oracle.index_of(e.source_id);
    const int d_idx = oracle.index_of(e.dest_id);
    ConceptMetricRow row;
    row.source_id = e.source_id;
    row.dest_id = e.dest_id;
    row.sf = probs_at(false, e.source_id, 0)(0, s_idx) - probs_at(true, e.source_id, 0)(0, s_idx);
    row.s2d_eff =
        probs_at(true, e.source_id, 0)(0, d_idx) - probs_at(false, e.source_id, 0)(0, d_idx);
    row.s2d_gen =
        probs_at(true, e.source_id, 1)(0, d_idx) - probs_at(false, e.source_id, 1)(0, d_idx);
    if (!registry.get(e.source_id).aliases.empty())
      row.al2d =
          probs_at(true, e.source_id, 2)(0, d_idx) - probs_at(false, e.source_id, 2)(0, d_idx);
    report.per_concept.push_back(row);
    report.sf += row.sf;
    report.s2d_efficacy += row.s2d_eff;
    report.s2d_generalization += row.s2d_gen;
    report.al2d += row.al2d;
  }
  if (!edits.empty()) {
    const double n = double(edits.size());
    report.sf /= n;
    report.s2d_efficacy /= n;
    report.s2d_generalization /= n;
    report.al2d /= n;
  }
  for (const auto& h : holdout) {
    const int h_idx = oracle.index_of(h);
    const double delta = probs_at(true, h, 1)(0, h_idx) - probs_at(false, h, 1)(0, h_idx);
    report.holdout_rows.emplace_back(h, delta);
    report.hd += delta;
  }
  if (!holdout.empty()) report.hd /= double(holdout.size());
  report.f1 = 0.5 * (report.s2d_generalization + report.hd);
  return report;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "metric,value,n,seed\n";
  auto row = [&](const char* name, double value) {
    out << name << ',' << format_double(value) << ',' << images_per_cell << ',' << seed << '\n';
  };
  row("sf", sf);
  row("s2d_efficacy", s2d_efficacy);
  row("s2d_generalization", s2d_generalization);
  row("al2d", al2d);
  row("hd", hd);
  row("f1", f1);
  if (delta_p) row("delta_p", *delta_p);
  return out.str();
}

std::string MetricsReport::breakdown_csv() const {
  std::ostringstream out;
  out << "source,dest,sf,s2d_efficacy,s2d_generalization,al2d\n";
  for (const auto& r : per_concept)
    out << r.source_id << ',' << r.dest_id << ',' << format_double(r.sf) << ','
        << format_double(r.s2d_eff) << ',' << format_double(r.s2d_gen) << ','
        << format_double(r.al2d) << '\n';
  for (const auto& [id, delta] : holdout_rows)
    out << id << ",holdout,,,," << format_double(delta) << '\n';
  return out.str();
}

std::vector<LayerRangeResult> ablate_layers(
    const ModelPair& pre, const NoiseSchedule& schedule, const Vocabulary& vocab,
    const std::vector<LayerEditPayload>& payloads, const std::vector<EditRequest>& requests,
    const std::map<int, CovarianceStats>& covariances,
    const std::vector<std::pair<int, int>>& ranges, const std::vector<EditPairSpec>& edits,
    const ConceptRegistry& registry, const ConfidenceOracle& oracle, const SamplingConfig& cfg,
    double alpha, bool recompute_keys) {
  std::vector<LayerRangeResult> rows;
  for (const auto& [lo, hi] : ranges) {
    EditPlan plan;
    plan.alpha = alpha;
    plan.layer_lo = lo;
    plan.layer_hi = hi;
    plan.recompute_keys = recompute_keys;
    std::vector<LayerEditPayload> in_range;
    for (const auto& p : payloads)
      if (p.layer >= lo && p.layer <= hi) in_range.push_back(p);
    auto [edited, report] = edit_model(pre.encoder, vocab, in_range, requests, plan, covariances);
    (void)report;
    const ModelPair post{std::move(edited), pre.denoiser};
    const MetricsReport metrics =
        compute_metrics(pre, post, schedule, vocab, edits, registry, oracle, cfg);
    rows.push_back({lo, hi, metrics.s2d_generalization, metrics.hd, metrics.f1});
  }
  return rows;
}

RectifyReport rectify_eval(const ModelPair& pre, const ModelPair& post,
                           const NoiseSchedule& schedule, const Vocabulary& vocab,
                           const std::vector<AliasEdit>& alias_edits,
                           const ConceptRegistry& registry, const ConfidenceOracle& oracle,
                           const SamplingConfig& cfg) {
  RectifyReport report;
  report.seed = cfg.seed;
  if (alias_edits.empty()) {
    report.images_per_cell = 0;
    return report;
  }

  std::set<std::string> classes;
  for (const auto& e : alias_edits) {
    registry.index_of(e.class_id);
    classes.insert(e.class_id);
  }
  std::vector<std::string> holdout;
  for (const auto& c : registry.concepts)
    if (!classes.count(c.id)) holdout.push_back(c.id);

  // Alias prompts: the class's tier prompts with the canonical name swapped
  // for the alias.
  std::vector<std::vector<std::string>> alias_templates, alias_paraphrases;
  for (const auto& e : alias_edits) {
    const ConceptSpec& c = registry.get(e.class_id);
    std::vector<std::string> t, p;
    for (const auto& prompt : c.templates) t.push_back(replace_all(prompt, c.name, e.alias));
    for (const auto& prompt : c.paraphrases) p.push_back(replace_all(prompt, c.name, e.alias));
    alias_templates.push_back(std::move(t));
    alias_paraphrases.push_back(std::move(p));
  }

  const int n_prompts = int(alias_templates[0].size());
  const int n_per_prompt = per_prompt_budget(cfg.images_per_cell, n_prompts);
  report.images_per_cell = n_per_prompt * n_prompts;

  std::vector<CellRequest> cells;
  for (size_t i = 0; i < alias_edits.size(); ++i) {
    cells.push_back({"", PromptTier::Template, -1, &alias_templates[i],
                     hash_string(alias_edits[i].alias)});
    cells.push_back({"", PromptTier::Paraphrase, -1, &alias_paraphrases[i],
                     hash_string(alias_edits[i].alias)});
  }
  for (const auto& h : holdout) cells.push_back({h, PromptTier::Paraphrase, -1, nullptr, 0});

  const CellTable table =
      CellTable::build(pre, post, schedule, vocab, oracle, registry, cells, n_per_prompt, cfg);

  // Misunderstood gate on the pre model.
  for (size_t i = 0; i < alias_edits.size(); ++i) {
    const int cls = oracle.index_of(alias_edits[i].class_id);
    const double pre_conf = table.pre[2 * i](0, cls);
    if (pre_conf >= 0.5)
      throw AliasNotMisunderstood("alias '" + alias_edits[i].alias +
                                  "' already generates its class with confidence " +
                                  format_double(pre_conf));
  }

  for (size_t i = 0; i < alias_edits.size(); ++i) {
    const int cls = oracle.index_of(alias_edits[i].class_id);
    ConceptMetricRow row;
    row.source_id = alias_edits[i].alias;
    row.dest_id = alias_edits[i].class_id;
    row.s2d_eff = table.post[2 * i](0, cls) - table.pre[2 * i](0, cls);
    row.s2d_gen = table.post[2 * i + 1](0, cls) - table.pre[2 * i + 1](0, cls);
    report.per_alias.push_back(row);
    report.s2d_efficacy += row.s2d_eff;
    report.s2d_generalization += row.s2d_gen;
  }
  report.s2d_efficacy /= double(alias_edits.size());
  report.s2d_generalization /= double(alias_edits.size());

  const size_t holdout_base = 2 * alias_edits.size();
  for (size_t i = 0; i < holdout.size(); ++i) {
    const int idx = oracle.index_of(holdout[i]);
    report.hd += table.post[holdout_base + i](0, idx) - table.pre[holdout_base + i](0, idx);
  }
  if (!holdout.empty()) report.hd /= double(holdout.size());
  return report;
}

std::string RectifyReport::to_csv() const {
  std::ostringstream out;
  out << "metric,value,n,seed\n";
  auto row = [&](const char* name, double value) {
    out << name << ',' << format_double(value) << ',' << images_per_cell << ',' << seed << '\n';
  };
  row("s2d_efficacy", s2d_efficacy);
  row("s2d_generalization", s2d_generalization);
  row("hd", hd);
  return out.str();
}

DebiasOutcome debias_loop(const std::vector<std::vector<Matrix>>& attribute_values,
                          const DebiasConfig& cfg, const RatioProbe& measure) {
  const int p = int(attribute_values.size());
  if (p < 2) throw ConfigError("debias: need at least 2 attributes");
  if (int(cfg.desired_ratios.size()) != p)
    throw ConfigError("debias: desired ratios must match the attribute count");
  double sum = 0.0;
  for (double r : cfg.desired_ratios) sum += r;
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("debias: desired ratios must sum to 1");
  if (cfg.max_iters < 0 || cfg.min_diff <= 0.0)
    throw ConfigError("debias: max_iters >= 0 and min_diff > 0 required");
  const size_t layers = attribute_values[0].size();
  for (const auto& vals : attribute_values)
    if (vals.size() != layers) throw DimensionMismatch("debias: per-attribute layer counts differ");

  DebiasOutcome out;
  out.factors.assign(p, 1.0 / p);
  auto weighted = [&](const std::vector<double>& f) {
    std::vector<Matrix> v;
    for (size_t l = 0; l < layers; ++l) {
      Matrix acc = scale(attribute_values[0][l], f[0]);
      for (int a = 1; a < p; ++a) acc = add(acc, scale(attribute_values[a][l], f[a]));
      v.push_back(std::move(acc));
    }
    return v;
  };
  out.value_per_layer = weighted(out.factors);

  for (int i = 0; i < cfg.max_iters; ++i) {
    const std::vector<double> ratios = measure(out.value_per_layer, out.factors, i);
    if (int(ratios.size()) != p) throw RatioEstimationFailed("ratio probe returned wrong size");
    out.ratio_trace.push_back(ratios);
    out.iterations = i + 1;
    double max_diff = 0.0;
    std::vector<double> df(p);
    for (int a = 0; a < p; ++a) {
      df[a] = ratios[a] - cfg.desired_ratios[a];
      max_diff = std::max(max_diff, df[a]);
    }
    if (max_diff <= cfg.min_diff) {
      out.converged = true;
      return out;
    }
    const double eta = cfg.eta0 * (1.0 - double(i) / double(cfg.max_iters));
    double factor_sum = 0.0;
    for (int a = 0; a < p; ++a) {
      out.factors[a] -= eta * df[a];
      factor_sum += out.factors[a];
    }
    if (factor_sum < 0.5 || factor_sum > 1.5) {
      if (!out.factor_drift_warning)
        std::cerr << "debias: factor sum drifted to " << factor_sum << "\n";
      out.factor_drift_warning = true;
    }
    out.value_per_layer = weighted(out.factors);
  }
  return out;
}

std::vector<double> measure_attribute_ratios(const ModelPair& models,
                                             const NoiseSchedule& schedule,
                                             const Vocabulary& vocab,
                                             const ConfidenceOracle& oracle,
                                             const std::vector<std::string>& prompts,
                                             const std::vector<int>& attribute_indices, int n,
                                             uint64_t seed) {
  if (prompts.empty()) throw EmptyPromptTier("ratio measurement needs prompts");
  std::vector<long> counts(attribute_indices.size(), 0);
  long hits = 0;
  for (int i = 0; i < n; ++i) {
    const std::string& prompt = prompts[i % prompts.size()];
    const Matrix cond = encode(models.encoder, vocab, prompt);
    const Matrix img = sample_image(models.denoiser, schedule, cond, schedule.steps(),
                                    derive_seed(seed, hash_string("ratio"), uint64_t(i)));
    const int cls = oracle.classify(img);
    for (size_t a = 0; a < attribute_indices.size(); ++a) {
      if (cls == attribute_indices[a]) {
        ++counts[a];
        ++hits;
        break;
      }
    }
  }
  if (hits == 0)
    throw RatioEstimationFailed("no generated sample classified into any attribute");
  std::vector<double> ratios(attribute_indices.size());
  for (size_t a = 0; a < ratios.size(); ++a) ratios[a] = double(counts[a]) / double(hits);
  return ratios;
}

DebiasOutcome debias_value(const ModelPair& models, const NoiseSchedule& schedule,
                           const Vocabulary& vocab, const ConceptRegistry& registry,
                           const ConfidenceOracle& oracle, const BareSubjectSpec& spec,
                           const std::vector<std::vector<LayerEditPayload>>& attribute_payloads,
                           const EditPlan& plan, const std::map<int, CovarianceStats>& covariances,
                           const DebiasConfig& cfg) {
  if (attribute_payloads.size() != spec.attribute_ids.size())
    throw ConfigError("debias: one payload set per attribute required");
  std::vector<int> attribute_indices;
  for (const auto& id : spec.attribute_ids) attribute_indices.push_back(oracle.index_of(id));

  // Per-attribute per-layer target values in plan order.
  std::vector<std::vector<Matrix>> values;
  for (const auto& payload_set : attribute_payloads) {
    std::vector<Matrix> per_layer;
    for (int layer = plan.layer_lo; layer <= plan.layer_hi; ++layer) {
      const LayerEditPayload* found = nullptr;
      for (const auto& p : payload_set)
        if (p.layer == layer) found = &p;
      if (!found) throw MissingPayload("debias: attribute payload missing layer " +
                                       std::to_string(layer));
      per_layer.push_back(found->new_value);
    }
    values.push_back(std::move(per_layer));
  }

  EditRequest bare;
  bare.concept_id = "debias:" + spec.subject;
  bare.subject = spec.subject;
  bare.source_prompts = spec.prompts;

  const RatioProbe probe = [&](const std::vector<Matrix>& value_per_layer,
                               const std::vector<double>& factors, int iter) {
    (void)factors;
    // EDIT: single-concept payloads targeting the weighted value.
    std::vector<LayerEditPayload> payloads;
    for (int layer = plan.layer_lo; layer <= plan.layer_hi; ++layer) {
      LayerEditPayload p;
      p.concept_id = bare.concept_id;
      p.layer = layer;
      p.key = extract_key(models.encoder, vocab, layer, spec.prompts, spec.subject);
      p.value = read_value(models.encoder, layer, p.key);
      p.new_value = value_per_layer[layer - plan.layer_lo];
      p.delta = sub(p.new_value, p.value);
      payloads.push_back(std::move(p));
    }
    auto [edited, report] =
        edit_model(models.encoder, vocab, payloads, {bare}, plan, covariances);
    (void)report;
    const ModelPair edited_pair{std::move(edited), models.denoiser};
    // GET_RATIOS on the edited model; RESTORE is the destruction of the
    // edited copy (the input models are never touched).
    return measure_attribute_ratios(edited_pair, schedule, vocab, oracle, spec.prompts,
                                    attribute_indices, cfg.samples,
                                    derive_seed(cfg.seed, hash_string("iter"), uint64_t(iter)));
  };

  return debias_loop(values, cfg, probe);
}

double delta_p_from_fraction(double fraction) { return std::abs(fraction - 0.5) / 0.5; }

double debias_metric(const ModelPair& models, const NoiseSchedule& schedule,
                     const Vocabulary& vocab, const ConceptRegistry& registry,
                     const std::vector<std::string>& prompts,
                     const std::vector<std::string>& attribute_ids, int n, uint64_t seed) {
  if (attribute_ids.size() != 2)
    throw ConfigError("delta_p is defined for exactly 2 attributes");
  if (n < 1) throw ConfigError("delta_p: need n >= 1 samples");
  const Matrix proto_a = registry.prototype(attribute_ids[0]);
  const Matrix proto_b = registry.prototype(attribute_ids[1]);
  long count_a = 0;
  for (int i = 0; i < n; ++i) {
    const std::string& prompt = prompts[i % prompts.size()];
    const Matrix cond = encode(models.encoder, vocab, prompt);
    const Matrix img = clamp_image(sample_image(models.denoiser, schedule, cond, schedule.steps(),
                                                derive_seed(seed, hash_string("dp"), uint64_t(i))));
    const double da = sum_squares(sub(img, proto_a));
    const double db = sum_squares(sub(img, proto_b));
    if (da <= db) ++count_a;
  }
  return delta_p_from_fraction(double(count_a) / double(n));
}

}  // namespace emcid
