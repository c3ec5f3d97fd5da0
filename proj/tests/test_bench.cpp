#include <doctest.h>

#include <cmath>

#include "emcid/bench.hpp"
#include "emcid/commands.hpp"

using namespace emcid;

namespace {

const std::string kData = EMCID_DATA_DIR;

struct Fixture {
  Vocabulary vocab = Vocabulary::load(kData + "/vocab.txt");
  ConceptRegistry registry = ConceptRegistry::load(kData + "/registry.json");
  ConfidenceOracle oracle = make_oracle(registry, 10.0);
  NoiseSchedule schedule = NoiseSchedule::linear(10, 1e-4, 0.05);
  ModelPair models;

  Fixture() {
    Rng rng(91);
    EncoderConfig cfg;
    models.encoder = init_encoder(cfg, vocab.size(), rng);
    models.denoiser = init_denoiser(DenoiserConfig{}, rng);
  }

  SamplingConfig sampling(uint64_t seed = 7) const {
    SamplingConfig s;
    s.images_per_cell = 4;
    s.seed = seed;
    s.workers = 2;
    return s;
  }

  std::vector<EditPairSpec> edits() const {
    return {{"red_square", "yellow_square"}, {"green_circle", "yellow_circle"}};
  }
};

}  // namespace

TEST_CASE("oracle probabilities are a proper distribution and prototypes self-classify") {
  Fixture f;
  Rng rng(1);
  const Matrix noise = rng.normal_matrix(1, kImagePixels);
  const Matrix probs = f.oracle.class_probs(noise);
  double sum = 0.0;
  for (int i = 0; i < probs.cols(); ++i) {
    CHECK(probs(0, i) >= 0.0);
    sum += probs(0, i);
  }
  CHECK(std::abs(sum - 1.0) <= 1e-9);

  for (const auto& c : f.registry.concepts) {
    const Matrix proto = f.registry.prototype(c.id);
    CHECK(f.oracle.ids[f.oracle.classify(proto)] == c.id);
    const Matrix p = f.oracle.class_probs(proto);
    // Self-probability is the max across classes.
    const int self = f.oracle.index_of(c.id);
    for (int i = 0; i < p.cols(); ++i) CHECK(p(0, self) >= p(0, i));
  }
}

TEST_CASE("gen_confidence is deterministic and matches the cell table") {
  Fixture f;
  const double v1 = gen_confidence(f.models, f.schedule, f.vocab, f.oracle, f.registry,
                                   "red_square", "red_square", PromptTier::Template, 1, 7);
  const double v2 = gen_confidence(f.models, f.schedule, f.vocab, f.oracle, f.registry,
                                   "red_square", "red_square", PromptTier::Template, 1, 7);
  CHECK(v1 == v2);
  CHECK(v1 >= 0.0);
  CHECK(v1 <= 1.0);
  CHECK_THROWS_AS(gen_confidence(f.models, f.schedule, f.vocab, f.oracle, f.registry, "nope",
                                 "red_square", PromptTier::Template, 1, 7),
                  UnknownConcept);
}

TEST_CASE("identity edit yields an exactly zero report") {
  Fixture f;
  const MetricsReport report = compute_metrics(f.models, f.models, f.schedule, f.vocab, f.edits(),
                                               f.registry, f.oracle, f.sampling());
  CHECK(report.sf == 0.0);
  CHECK(report.s2d_efficacy == 0.0);
  CHECK(report.s2d_generalization == 0.0);
  CHECK(report.al2d == 0.0);
  CHECK(report.hd == 0.0);
  CHECK(report.f1 == 0.0);
  const std::string csv = report.to_csv();
  CHECK(csv.rfind("metric,value,n,seed\n", 0) == 0);
  CHECK(csv.find("sf,0,") != std::string::npos);
}

TEST_CASE("metrics match a brute-force regenerate-and-reclassify oracle") {
  Fixture f;
  // A genuinely different post model.
  Rng rng(92);
  ModelPair post = f.models;
  post.encoder.layers[2].w_proj =
      add(post.encoder.layers[2].w_proj,
          rng.normal_matrix(post.encoder.cfg.d_model, post.encoder.cfg.d_ff, 0.05));

  const SamplingConfig cfg = f.sampling(31);
  const MetricsReport report = compute_metrics(f.models, post, f.schedule, f.vocab, f.edits(),
                                               f.registry, f.oracle, cfg);

  // Independent recomputation straight from gen_confidence / cell calls.
  const int n_prompts = int(f.registry.prompts("red_square", PromptTier::Template).size());
  const int n_per_prompt = std::max(1, cfg.images_per_cell / n_prompts);
  double sf = 0.0, s2d_eff = 0.0, s2d_gen = 0.0, al2d = 0.0;
  for (const auto& e : f.edits()) {
    sf += gen_confidence(f.models, f.schedule, f.vocab, f.oracle, f.registry, e.source_id,
                         e.source_id, PromptTier::Template, n_per_prompt, cfg.seed) -
          gen_confidence(post, f.schedule, f.vocab, f.oracle, f.registry, e.source_id, e.source_id,
                         PromptTier::Template, n_per_prompt, cfg.seed);
    s2d_eff += gen_confidence(post, f.schedule, f.vocab, f.oracle, f.registry, e.dest_id,
                              e.source_id, PromptTier::Template, n_per_prompt, cfg.seed) -
               gen_confidence(f.models, f.schedule, f.vocab, f.oracle, f.registry, e.dest_id,
                              e.source_id, PromptTier::Template, n_per_prompt, cfg.seed);
    s2d_gen += gen_confidence(post, f.schedule, f.vocab, f.oracle, f.registry, e.dest_id,
                              e.source_id, PromptTier::Paraphrase, n_per_prompt, cfg.seed) -
               gen_confidence(f.models, f.schedule, f.vocab, f.oracle, f.registry, e.dest_id,
                              e.source_id, PromptTier::Paraphrase, n_per_prompt, cfg.seed);
    const int d_idx = f.oracle.index_of(e.dest_id);
    const Matrix alias_post = cell_mean_probs(post, f.schedule, f.vocab, f.oracle, f.registry,
                                              e.source_id, PromptTier::Paraphrase, 0,
                                              n_per_prompt, cfg.seed);
    const Matrix alias_pre = cell_mean_probs(f.models, f.schedule, f.vocab, f.oracle, f.registry,
                                             e.source_id, PromptTier::Paraphrase, 0, n_per_prompt,
                                             cfg.seed);
    al2d += alias_post(0, d_idx) - alias_pre(0, d_idx);
  }
  sf /= 2.0;
  s2d_eff /= 2.0;
  s2d_gen /= 2.0;
  al2d /= 2.0;
  CHECK(std::abs(report.sf - sf) <= 1e-12);
  CHECK(std::abs(report.s2d_efficacy - s2d_eff) <= 1e-12);
  CHECK(std::abs(report.s2d_generalization - s2d_gen) <= 1e-12);
  CHECK(std::abs(report.al2d - al2d) <= 1e-12);

  double hd = 0.0;
  int count = 0;
  for (const auto& c : f.registry.concepts) {
    if (c.id == "red_square" || c.id == "green_circle" || c.id == "yellow_square" ||
        c.id == "yellow_circle")
      continue;
    hd += gen_confidence(post, f.schedule, f.vocab, f.oracle, f.registry, c.id, c.id,
                         PromptTier::Paraphrase, n_per_prompt, cfg.seed) -
          gen_confidence(f.models, f.schedule, f.vocab, f.oracle, f.registry, c.id, c.id,
                         PromptTier::Paraphrase, n_per_prompt, cfg.seed);
    ++count;
  }
  hd /= count;
  CHECK(std::abs(report.hd - hd) <= 1e-12);
  CHECK(report.f1 == doctest::Approx(0.5 * (report.s2d_generalization + report.hd)).epsilon(1e-15));

  // Metric bounds.
  for (double v : {report.sf, report.s2d_efficacy, report.s2d_generalization, report.al2d,
                   report.hd}) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("holdout exhaustion raises NoHoldoutConcepts") {
  Fixture f;
  std::vector<EditPairSpec> edits;
  const std::vector<std::string> dests = {"yellow_square", "yellow_circle"};
  int i = 0;
  for (const auto& c : f.registry.concepts) {
    if (c.id == "yellow_square" || c.id == "yellow_circle") continue;
    edits.push_back({c.id, dests[i++ % 2]});
  }
  // All 17 concepts are now sources or destinations.
  CHECK_THROWS_AS(compute_metrics(f.models, f.models, f.schedule, f.vocab, edits, f.registry,
                                  f.oracle, f.sampling()),
                  NoHoldoutConcepts);
}

TEST_CASE("rectify_eval gate, identity and vacuous list") {
  Fixture f;
  const RectifyReport empty = rectify_eval(f.models, f.models, f.schedule, f.vocab, {}, f.registry,
                                           f.oracle, f.sampling());
  CHECK(empty.per_alias.empty());
  CHECK(empty.s2d_efficacy == 0.0);

  // Random models classify nothing confidently, so the gate passes and the
  // identity report is exactly zero.
  const std::vector<AliasEdit> edits{{"amberon", "yellow_square"}, {"solis", "yellow_circle"}};
  const RectifyReport identity = rectify_eval(f.models, f.models, f.schedule, f.vocab, edits,
                                              f.registry, f.oracle, f.sampling());
  CHECK(identity.s2d_efficacy == 0.0);
  CHECK(identity.s2d_generalization == 0.0);
  CHECK(identity.hd == 0.0);
  CHECK(identity.to_csv().rfind("metric,value,n,seed\n", 0) == 0);
}

TEST_CASE("debias_loop trivial and controlled cases") {
  Rng rng(5);
  std::vector<std::vector<Matrix>> values(2);
  for (int a = 0; a < 2; ++a)
    for (int l = 0; l < 3; ++l) values[a].push_back(rng.normal_matrix(1, 8));

  DebiasConfig cfg;
  cfg.desired_ratios = {0.5, 0.5};
  cfg.max_iters = 0;
  cfg.min_diff = 0.05;
  int calls = 0;
  const auto no_probe = [&](const std::vector<Matrix>&, const std::vector<double>&, int) {
    ++calls;
    return std::vector<double>{1.0, 0.0};
  };
  const DebiasOutcome m0 = debias_loop(values, cfg, no_probe);
  CHECK(calls == 0);
  CHECK(m0.iterations == 0);
  CHECK_FALSE(m0.converged);
  for (int l = 0; l < 3; ++l) {
    const Matrix uniform = scale(add(values[0][l], values[1][l]), 0.5);
    CHECK(frobenius_norm(sub(m0.value_per_layer[l], uniform)) < 1e-15);
  }

  // Immediate convergence: one measurement, uniform value returned.
  cfg.max_iters = 30;
  const auto balanced = [&](const std::vector<Matrix>&, const std::vector<double>&, int) {
    return std::vector<double>{0.5, 0.5};
  };
  const DebiasOutcome one = debias_loop(values, cfg, balanced);
  CHECK(one.converged);
  CHECK(one.iterations == 1);
  CHECK(one.factors[0] == doctest::Approx(0.5));

  // Linear responder: ratio of attribute 0 responds linearly to F[0].
  cfg.eta0 = 0.8;
  const auto linear = [&](const std::vector<Matrix>&, const std::vector<double>& factors, int) {
    const double r0 = std::min(1.0, std::max(0.0, 0.4 + 0.9 * factors[0]));
    return std::vector<double>{r0, 1.0 - r0};
  };
  const DebiasOutcome lin = debias_loop(values, cfg, linear);
  CHECK(lin.converged);
  CHECK(lin.iterations <= 30);
  const auto last = lin.ratio_trace.back();
  CHECK(std::max(last[0] - 0.5, last[1] - 0.5) <= cfg.min_diff + 0.45 * cfg.eta0);

  DebiasConfig bad = cfg;
  bad.desired_ratios = {0.7, 0.7};
  CHECK_THROWS_AS(debias_loop(values, bad, linear), ConfigError);
}

TEST_CASE("delta_p definition") {
  CHECK(delta_p_from_fraction(0.5) == 0.0);
  CHECK(delta_p_from_fraction(1.0) == 1.0);
  CHECK(delta_p_from_fraction(0.0) == 1.0);
  CHECK(delta_p_from_fraction(0.75) == doctest::Approx(0.5));
}

TEST_CASE("ratio measurement fails when nothing classifies into the attributes") {
  Fixture f;
  // Oracle with a sink prototype (all zeros) that every noisy sample is
  // closest to, plus two saturated attribute prototypes.
  ConfidenceOracle oracle;
  oracle.ids = {"attr_a", "attr_b", "sink"};
  Matrix hot(1, kImagePixels);
  for (int i = 0; i < kImagePixels; ++i) hot(0, i) = 1.0;
  oracle.prototypes = {hot, scale(hot, -1.0), Matrix(1, kImagePixels)};
  oracle.tau = 10.0;
  CHECK_THROWS_AS(
      measure_attribute_ratios(f.models, f.schedule, f.vocab, oracle, {"a red square"}, {0, 1}, 4,
                               9),
      RatioEstimationFailed);
}

TEST_CASE("ablate_layers empty range list yields an empty table") {
  Fixture f;
  const auto rows = ablate_layers(f.models, f.schedule, f.vocab, {}, {}, {}, {}, f.edits(),
                                  f.registry, f.oracle, f.sampling(), 0.5, false);
  CHECK(rows.empty());
}
