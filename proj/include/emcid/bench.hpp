#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emcid/denoiser.hpp"
#include "emcid/registry.hpp"
#include "emcid/stage1.hpp"
#include "emcid/stage2.hpp"

namespace emcid {

struct ModelPair {
  EncoderModel encoder;
  DenoiserModel denoiser;
};

// Prototype classifier: softmax over negative mean-squared pixel distance
// to each concept prototype. Deterministic and brute-force checkable, so
// the benchmark numbers never depend on a second learned model.
struct ConfidenceOracle {
  std::vector<std::string> ids;
  std::vector<Matrix> prototypes;
  double tau = 10.0;

  Matrix class_probs(const Matrix& image) const;  // 1 x C, sums to 1
  int classify(const Matrix& image) const;
  int index_of(const std::string& id) const;
};

ConfidenceOracle make_oracle(const ConceptRegistry& registry, double tau = 10.0);

struct SamplingConfig {
  int images_per_cell = 16;
  uint64_t seed = 0;
  int workers = 1;
};

// p_M(a, b): mean confidence that images generated for concept b (under the
// given prompt tier) are classified as concept a. Seeds derive from
// (seed, b, tier, prompt, sample), never from the model, so identical
// models give identical values.
double gen_confidence(const ModelPair& models, const NoiseSchedule& schedule,
                      const Vocabulary& vocab, const ConfidenceOracle& oracle,
                      const ConceptRegistry& registry, const std::string& concept_a,
                      const std::string& concept_b, PromptTier tier, int n_per_prompt,
                      uint64_t seed);

// Mean class-probability vector over one generation cell. alias_index < 0
// uses the canonical prompts; otherwise the alias-substituted tier.
Matrix cell_mean_probs(const ModelPair& models, const NoiseSchedule& schedule,
                       const Vocabulary& vocab, const ConfidenceOracle& oracle,
                       const ConceptRegistry& registry, const std::string& concept_id,
                       PromptTier tier, int alias_index, int n_per_prompt, uint64_t seed);

struct EditPairSpec {
  std::string source_id;
  std::string dest_id;
};

struct ConceptMetricRow {
  std::string source_id, dest_id;
  double sf = 0.0, s2d_eff = 0.0, s2d_gen = 0.0, al2d = 0.0;
};

struct MetricsReport {
  double sf = 0.0;
  double s2d_efficacy = 0.0;
  double s2d_generalization = 0.0;
  double al2d = 0.0;
  double hd = 0.0;
  double f1 = 0.0;  // mean of s2d_generalization and hd
  std::optional<double> delta_p;
  std::vector<ConceptMetricRow> per_concept;
  std::vector<std::pair<std::string, double>> holdout_rows;
  int images_per_cell = 0;
  uint64_t seed = 0;

  std::string to_csv() const;         // header: metric,value,n,seed
  std::string breakdown_csv() const;  // per-concept rows
};

MetricsReport compute_metrics(const ModelPair& pre, const ModelPair& post,
                              const NoiseSchedule& schedule, const Vocabulary& vocab,
                              const std::vector<EditPairSpec>& edits,
                              const ConceptRegistry& registry, const ConfidenceOracle& oracle,
                              const SamplingConfig& cfg);

struct LayerRangeResult {
  int lo = 0, hi = 0;
  double s2d_gen = 0.0, hd = 0.0, f1 = 0.0;
};

std::vector<LayerRangeResult> ablate_layers(
    const ModelPair& pre, const NoiseSchedule& schedule, const Vocabulary& vocab,
    const std::vector<LayerEditPayload>& payloads, const std::vector<EditRequest>& requests,
    const std::map<int, CovarianceStats>& covariances,
    const std::vector<std::pair<int, int>>& ranges, const std::vector<EditPairSpec>& edits,
    const ConceptRegistry& registry, const ConfidenceOracle& oracle, const SamplingConfig& cfg,
    double alpha, bool recompute_keys);

struct AliasEdit {
  std::string alias;     // the misunderstood surface form
  std::string class_id;  // registry concept it should generate
};

struct RectifyReport {
  double s2d_efficacy = 0.0;
  double s2d_generalization = 0.0;
  double hd = 0.0;
  std::vector<ConceptMetricRow> per_alias;
  int images_per_cell = 0;
  uint64_t seed = 0;
  std::string to_csv() const;
};

// Pre-edit gate: every alias must generate its class with confidence < 0.5
// on the pre model (template tier), otherwise AliasNotMisunderstood.
RectifyReport rectify_eval(const ModelPair& pre, const ModelPair& post,
                           const NoiseSchedule& schedule, const Vocabulary& vocab,
                           const std::vector<AliasEdit>& alias_edits,
                           const ConceptRegistry& registry, const ConfidenceOracle& oracle,
                           const SamplingConfig& cfg);

struct DebiasConfig {
  std::vector<double> desired_ratios;
  double eta0 = 0.4;
  int max_iters = 30;
  double min_diff = 0.05;
  int samples = 24;
  uint64_t seed = 0;
};

struct DebiasOutcome {
  std::vector<double> factors;
  std::vector<Matrix> value_per_layer;  // debiased value at each edited layer
  int iterations = 0;
  bool converged = false;
  bool factor_drift_warning = false;  // sum(F) left [0.5, 1.5]
  std::vector<std::vector<double>> ratio_trace;
};

// The factor-adjustment loop, generic over the ratio measurement so the
// controlled linear-response harness can drive it.
using RatioProbe = std::function<std::vector<double>(const std::vector<Matrix>& value_per_layer,
                                                     const std::vector<double>& factors, int iter)>;
DebiasOutcome debias_loop(const std::vector<std::vector<Matrix>>& attribute_values,
                          const DebiasConfig& cfg, const RatioProbe& measure);

// Full-model debiasing: per iteration, edit a copy of the model with the
// current weighted value, measure attribute ratios over generated samples,
// and restore (the input pair is never mutated).
DebiasOutcome debias_value(const ModelPair& models, const NoiseSchedule& schedule,
                           const Vocabulary& vocab, const ConceptRegistry& registry,
                           const ConfidenceOracle& oracle, const BareSubjectSpec& spec,
                           const std::vector<std::vector<LayerEditPayload>>& attribute_payloads,
                           const EditPlan& plan, const std::map<int, CovarianceStats>& covariances,
                           const DebiasConfig& cfg);

// Delta_p = |F_p - 0.5| / 0.5 for a measured attribute fraction F_p.
double delta_p_from_fraction(double fraction);

// Two-attribute balance error: F_p is the fraction of samples nearest to
// the first attribute's prototype.
double debias_metric(const ModelPair& models, const NoiseSchedule& schedule,
                     const Vocabulary& vocab, const ConceptRegistry& registry,
                     const std::vector<std::string>& prompts,
                     const std::vector<std::string>& attribute_ids, int n, uint64_t seed);

// Ratio measurement used by debias_value, exposed for the CLI.
std::vector<double> measure_attribute_ratios(const ModelPair& models,
                                             const NoiseSchedule& schedule,
                                             const Vocabulary& vocab,
                                             const ConfidenceOracle& oracle,
                                             const std::vector<std::string>& prompts,
                                             const std::vector<int>& attribute_indices, int n,
                                             uint64_t seed);

}  // namespace emcid
