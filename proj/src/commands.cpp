#include "emcid/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "emcid/checkpoint.hpp"
#include "emcid/csv.hpp"
#include "emcid/sha1.hpp"
#include "emcid/workers.hpp"

namespace emcid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Bundle {
  Vocabulary vocab;
  ConceptRegistry registry;
  NoiseSchedule schedule;
  ConfidenceOracle oracle;

  explicit Bundle(const RunConfig& cfg)
      : vocab(Vocabulary::load(cfg.vocab_path)),
        registry(ConceptRegistry::load(cfg.registry_path)),
        schedule(cfg.make_schedule()),
        oracle(make_oracle(registry, cfg.oracle_tau)) {
    registry.validate(vocab);
  }
};

std::string out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return (fs::path(cfg.out_dir) / name).string();
}

void write_provenance(const RunConfig& cfg, const std::string& artifact,
                      const std::vector<std::string>& inputs) {
  json doc;
  doc["seed"] = cfg.seed;
  doc["config_hash"] = cfg.config_hash();
  json in = json::object();
  for (const auto& path : inputs) in[path] = git_blob_hash_file(path);
  doc["inputs"] = in;
  write_text_file(artifact + ".provenance.json", doc.dump(2) + "\n");
}

SamplingConfig sampling_config(const RunConfig& cfg) {
  SamplingConfig s;
  s.images_per_cell = cfg.bench_images_per_cell;
  s.seed = derive_seed(cfg.seed, hash_string("bench"));
  s.workers = cfg.effective_workers();
  return s;
}

std::vector<EditPairSpec> edit_pairs(const std::vector<EditRequest>& requests) {
  std::vector<EditPairSpec> pairs;
  for (const auto& r : requests) {
    if (r.dest_concept.empty())
      throw ConfigError("request '" + r.concept_id +
                        "' needs dest_concept to be benchmarked");
    pairs.push_back({r.concept_id, r.dest_concept});
  }
  return pairs;
}

double training_gate(const ModelPair& models, const Bundle& b, const SamplingConfig& s) {
  double acc = 0.0;
  for (const auto& c : b.registry.concepts)
    acc += gen_confidence(models, b.schedule, b.vocab, b.oracle, b.registry, c.id, c.id,
                          PromptTier::Template, std::max(1, s.images_per_cell / 4), s.seed);
  return acc / double(b.registry.concepts.size());
}

}  // namespace

std::vector<std::string> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);
  std::vector<std::string> prompts;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) prompts.push_back(line);
  }
  if (prompts.empty()) throw EmptyCorpus("corpus file has no prompts: " + path);
  return prompts;
}

std::vector<LayerEditPayload> run_stage1(const ModelPair& models, const NoiseSchedule& schedule,
                                         const Vocabulary& vocab,
                                         const std::vector<EditRequest>& requests,
                                         const Stage1Config& base, const std::vector<int>& layers,
                                         int workers) {
  struct Task {
    int request;
    int layer;
  };
  std::vector<Task> tasks;
  for (size_t r = 0; r < requests.size(); ++r) {
    const std::vector<int>& req_layers = requests[r].layers.empty() ? layers : requests[r].layers;
    for (int l : req_layers) tasks.push_back({int(r), l});
  }
  std::vector<LayerEditPayload> results(tasks.size());
  parallel_for(int(tasks.size()), workers, [&](int i) {
    const EditRequest& req = requests[tasks[i].request];
    Stage1Config cfg = base;
    // Seeds hang off (concept, layer), never off the task index, so any
    // worker count and concept order produce identical payloads.
    cfg.seed = derive_seed(base.seed, hash_string(req.concept_id), uint64_t(tasks[i].layer));
    results[i] = optimize_value(models.encoder, models.denoiser, schedule, vocab, req,
                                tasks[i].layer, cfg);
  });
  return results;
}

std::vector<std::pair<int, int>> parse_ranges(const std::string& spec) {
  std::vector<std::pair<int, int>> ranges;
  std::istringstream in(spec);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (part.empty()) continue;
    const size_t dash = part.find('-');
    if (dash == std::string::npos)
      throw ConfigError("layer range '" + part + "' must look like lo-hi");
    ranges.emplace_back(std::stoi(part.substr(0, dash)), std::stoi(part.substr(dash + 1)));
  }
  return ranges;
}

int cmd_train(const RunConfig& cfg) {
  cfg.validate();
  Bundle b(cfg);
  const TrainedModels trained = train_models(b.vocab, b.registry, cfg.encoder, cfg.denoiser,
                                             b.schedule, cfg.train, cfg.seed);
  const ModelPair models{trained.encoder, trained.denoiser};

  Checkpoint ckpt;
  put_model_pair(ckpt, models);
  ckpt.metadata["seed"] = cfg.seed;
  ckpt.metadata["config"] = cfg.to_json();
  ckpt.metadata["final_denoise_loss"] = trained.final_denoise_loss;
  ckpt.metadata["final_contrast_loss"] = trained.final_contrast_loss;
  const std::string path = out_path(cfg, "model.ckpt");
  ckpt.save(path);
  write_provenance(cfg, path, {cfg.vocab_path, cfg.registry_path});

  const double gate = training_gate(models, b, sampling_config(cfg));
  std::cout << "final_denoise_loss=" << format_double(trained.final_denoise_loss) << "\n"
            << "final_contrast_loss=" << format_double(trained.final_contrast_loss) << "\n"
            << "gate_mean_self_confidence=" << format_double(gate) << "\n"
            << "checkpoint=" << path << "\n";
  return 0;
}

int cmd_covariance(const RunConfig& cfg, const std::string& model_ckpt) {
  cfg.validate();
  Bundle b(cfg);
  const ModelPair models = take_model_pair(Checkpoint::load(model_ckpt));
  const std::vector<std::string> corpus = load_corpus(cfg.corpus_path);
  std::vector<int> layers;
  for (int l = 0; l < models.encoder.cfg.n_layers; ++l) layers.push_back(l);
  const auto covs = estimate_covariances(models.encoder, b.vocab, corpus, layers, cfg.edit_lambda,
                                         cfg.effective_workers());
  Checkpoint ckpt;
  put_covariances(ckpt, covs);
  ckpt.metadata["seed"] = cfg.seed;
  ckpt.metadata["corpus_prompts"] = corpus.size();
  const std::string path = out_path(cfg, "cov.ckpt");
  ckpt.save(path);
  write_provenance(cfg, path, {cfg.corpus_path, model_ckpt});
  std::cout << "covariance layers=" << layers.size() << " samples=" << covs.at(0).samples
            << " lambda=" << format_double(cfg.edit_lambda) << "\ncheckpoint=" << path << "\n";
  return 0;
}

int cmd_stage1(const RunConfig& cfg, const std::string& model_ckpt,
               const std::string& requests_path) {
  cfg.validate();
  Bundle b(cfg);
  const ModelPair models = take_model_pair(Checkpoint::load(model_ckpt));
  const std::vector<EditRequest> requests = load_edit_requests(requests_path);
  const EditPlan plan = cfg.edit_plan(models.encoder.cfg.n_layers);
  std::vector<int> layers;
  for (int l = plan.layer_lo; l <= plan.layer_hi; ++l) layers.push_back(l);
  Stage1Config s1 = cfg.stage1;
  s1.seed = derive_seed(cfg.seed, hash_string("stage1"));
  const std::vector<LayerEditPayload> payloads =
      run_stage1(models, b.schedule, b.vocab, requests, s1, layers, cfg.effective_workers());

  Checkpoint ckpt;
  put_payloads(ckpt, payloads);
  ckpt.metadata["seed"] = cfg.seed;
  const std::string path = out_path(cfg, "payloads.ckpt");
  ckpt.save(path);
  write_provenance(cfg, path, {model_ckpt, requests_path});
  for (const auto& p : payloads)
    std::cout << p.concept_id << " layer=" << p.layer
              << " loss_hybrid=" << format_double(p.final_loss.hybrid)
              << " |delta|=" << format_double(frobenius_norm(p.delta)) << "\n";
  std::cout << "payloads=" << payloads.size() << "\ncheckpoint=" << path << "\n";
  return 0;
}

int cmd_edit(const RunConfig& cfg, const std::string& model_ckpt, const std::string& payloads_ckpt,
             const std::string& cov_ckpt, const std::string& requests_path) {
  cfg.validate();
  Bundle b(cfg);
  const ModelPair models = take_model_pair(Checkpoint::load(model_ckpt));
  const std::vector<LayerEditPayload> payloads = take_payloads(Checkpoint::load(payloads_ckpt));
  const auto covs = take_covariances(Checkpoint::load(cov_ckpt));
  std::vector<EditRequest> requests;
  if (!requests_path.empty()) requests = load_edit_requests(requests_path);

  const EditPlan plan = cfg.edit_plan(models.encoder.cfg.n_layers);
  auto [edited, report] = edit_model(models.encoder, b.vocab, payloads, requests, plan, covs);

  Checkpoint ckpt;
  put_model_pair(ckpt, {edited, models.denoiser});
  ckpt.metadata["seed"] = cfg.seed;
  ckpt.metadata["alpha"] = plan.alpha;
  ckpt.metadata["layer_lo"] = plan.layer_lo;
  ckpt.metadata["layer_hi"] = plan.layer_hi;
  ckpt.metadata["parent"] = git_blob_hash_file(model_ckpt);
  const std::string path = out_path(cfg, "edited.ckpt");
  ckpt.save(path);
  const std::string report_path = out_path(cfg, "edit_report.csv");
  write_text_file(report_path, report.to_csv());
  write_provenance(cfg, path, {model_ckpt, payloads_ckpt, cov_ckpt});
  std::cout << "alpha=" << format_double(plan.alpha) << " layers=[" << plan.layer_lo << ","
            << plan.layer_hi << "]\n";
  for (const auto& e : report.entries)
    std::cout << "layer " << e.layer << ": |delta|=" << format_double(e.frob_delta)
              << " edit_residual=" << format_double(e.edit_residual)
              << " stationarity=" << format_double(e.stationarity) << "\n";
  std::cout << "checkpoint=" << path << "\nreport=" << report_path << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& pre_ckpt, const std::string& post_ckpt,
             const std::string& requests_path) {
  cfg.validate();
  Bundle b(cfg);
  const ModelPair pre = take_model_pair(Checkpoint::load(pre_ckpt));
  const ModelPair post = take_model_pair(Checkpoint::load(post_ckpt));
  const std::vector<EditRequest> requests = load_edit_requests(requests_path);
  const MetricsReport report = compute_metrics(pre, post, b.schedule, b.vocab,
                                               edit_pairs(requests), b.registry, b.oracle,
                                               sampling_config(cfg));
  const std::string path = out_path(cfg, "metrics.csv");
  write_text_file(path, report.to_csv());
  const std::string breakdown = out_path(cfg, "metrics_breakdown.csv");
  write_text_file(breakdown, report.breakdown_csv());
  write_provenance(cfg, path, {pre_ckpt, post_ckpt, requests_path});
  std::cout << report.to_csv() << "report=" << path << "\n";
  return 0;
}

int cmd_rectify(const RunConfig& cfg, const std::string& model_ckpt,
                const std::string& requests_path, const std::string& cov_ckpt) {
  cfg.validate();
  Bundle b(cfg);
  const ModelPair models = take_model_pair(Checkpoint::load(model_ckpt));
  const std::vector<EditRequest> requests = load_edit_requests(requests_path);
  const auto covs = take_covariances(Checkpoint::load(cov_ckpt));
  const EditPlan plan = cfg.edit_plan(models.encoder.cfg.n_layers);
  std::vector<int> layers;
  for (int l = plan.layer_lo; l <= plan.layer_hi; ++l) layers.push_back(l);

  Stage1Config s1 = cfg.stage1;
  s1.seed = derive_seed(cfg.seed, hash_string("rectify"));
  const std::vector<LayerEditPayload> payloads =
      run_stage1(models, b.schedule, b.vocab, requests, s1, layers, cfg.effective_workers());
  auto [edited, report] = edit_model(models.encoder, b.vocab, payloads, requests, plan, covs);
  const ModelPair post{edited, models.denoiser};

  std::vector<AliasEdit> alias_edits;
  for (const auto& r : requests) alias_edits.push_back({r.subject, r.dest_concept});
  const RectifyReport rect = rectify_eval(models, post, b.schedule, b.vocab, alias_edits,
                                          b.registry, b.oracle, sampling_config(cfg));

  Checkpoint ckpt;
  put_model_pair(ckpt, post);
  ckpt.metadata["seed"] = cfg.seed;
  const std::string path = out_path(cfg, "rectified.ckpt");
  ckpt.save(path);
  const std::string csv_path = out_path(cfg, "rectify.csv");
  write_text_file(csv_path, rect.to_csv());
  write_provenance(cfg, path, {model_ckpt, requests_path, cov_ckpt});
  std::cout << rect.to_csv() << "checkpoint=" << path << "\n";
  return 0;
}

int cmd_debias(const RunConfig& cfg, const std::string& model_ckpt, const std::string& cov_ckpt,
               const DebiasCliOptions& opts) {
  cfg.validate();
  Bundle b(cfg);
  const ModelPair models = take_model_pair(Checkpoint::load(model_ckpt));
  const auto covs = take_covariances(Checkpoint::load(cov_ckpt));

  const BareSubjectSpec* spec = nullptr;
  for (const auto& s : b.registry.bare_subjects)
    if (s.subject == opts.subject) spec = &s;
  if (!spec)
    throw UnknownConcept("registry has no bare subject '" + opts.subject + "' to debias");

  const EditPlan plan = cfg.edit_plan(models.encoder.cfg.n_layers);
  std::vector<int> layers;
  for (int l = plan.layer_lo; l <= plan.layer_hi; ++l) layers.push_back(l);

  // Stage-I values for each attribute-qualified concept.
  std::vector<EditRequest> attr_requests;
  for (const auto& attr : spec->attribute_ids) {
    EditRequest r;
    r.concept_id = opts.subject + "->" + attr;
    r.subject = opts.subject;
    r.source_prompts = spec->prompts;
    const ConceptSpec& attr_spec = b.registry.get(attr);
    for (size_t i = 0; i < spec->prompts.size(); ++i)
      r.dest_prompts.push_back(attr_spec.templates[i % attr_spec.templates.size()]);
    attr_requests.push_back(std::move(r));
  }
  Stage1Config s1 = cfg.stage1;
  s1.seed = derive_seed(cfg.seed, hash_string("debias"));
  const std::vector<LayerEditPayload> all_payloads =
      run_stage1(models, b.schedule, b.vocab, attr_requests, s1, layers, cfg.effective_workers());
  std::vector<std::vector<LayerEditPayload>> per_attr(spec->attribute_ids.size());
  for (const auto& p : all_payloads)
    for (size_t a = 0; a < attr_requests.size(); ++a)
      if (p.concept_id == attr_requests[a].concept_id) per_attr[a].push_back(p);

  DebiasConfig dbg;
  dbg.desired_ratios.assign(spec->attribute_ids.size(), 1.0 / spec->attribute_ids.size());
  dbg.eta0 = opts.eta0;
  dbg.max_iters = opts.max_iters;
  dbg.min_diff = opts.min_diff;
  dbg.samples = opts.ratio_samples;
  dbg.seed = derive_seed(cfg.seed, hash_string("debias-ratios"));

  const double dp_pre =
      debias_metric(models, b.schedule, b.vocab, b.registry, spec->prompts,
                    {spec->attribute_ids[0], spec->attribute_ids[1]}, opts.metric_samples,
                    derive_seed(cfg.seed, hash_string("dp")));

  const DebiasOutcome outcome = debias_value(models, b.schedule, b.vocab, b.registry, b.oracle,
                                             *spec, per_attr, plan, covs, dbg);

  // Final edit with the debiased value.
  std::vector<LayerEditPayload> final_payloads;
  for (int l : layers) {
    LayerEditPayload p;
    p.concept_id = "debias:" + opts.subject;
    p.layer = l;
    p.key = extract_key(models.encoder, b.vocab, l, spec->prompts, opts.subject);
    p.value = read_value(models.encoder, l, p.key);
    p.new_value = outcome.value_per_layer[l - plan.layer_lo];
    p.delta = sub(p.new_value, p.value);
    final_payloads.push_back(std::move(p));
  }
  EditRequest bare;
  bare.concept_id = "debias:" + opts.subject;
  bare.subject = opts.subject;
  bare.source_prompts = spec->prompts;
  auto [edited, report] = edit_model(models.encoder, b.vocab, final_payloads, {bare}, plan, covs);
  const ModelPair post{edited, models.denoiser};
  const double dp_post =
      debias_metric(post, b.schedule, b.vocab, b.registry, spec->prompts,
                    {spec->attribute_ids[0], spec->attribute_ids[1]}, opts.metric_samples,
                    derive_seed(cfg.seed, hash_string("dp")));

  Checkpoint ckpt;
  put_model_pair(ckpt, post);
  ckpt.metadata["seed"] = cfg.seed;
  const std::string path = out_path(cfg, "debiased.ckpt");
  ckpt.save(path);
  write_provenance(cfg, path, {model_ckpt, cov_ckpt});
  std::cout << "delta_p_pre=" << format_double(dp_pre) << "\n"
            << "delta_p_post=" << format_double(dp_post) << "\n"
            << "iterations=" << outcome.iterations << " converged=" << outcome.converged << "\n"
            << "checkpoint=" << path << "\n";
  return 0;
}

int cmd_sweep_alpha(const RunConfig& cfg, const std::string& model_ckpt,
                    const std::string& payloads_ckpt, const std::string& cov_ckpt,
                    const std::vector<double>& alphas) {
  cfg.validate();
  Bundle b(cfg);
  const ModelPair models = take_model_pair(Checkpoint::load(model_ckpt));
  const std::vector<LayerEditPayload> payloads = take_payloads(Checkpoint::load(payloads_ckpt));
  const auto covs = take_covariances(Checkpoint::load(cov_ckpt));
  const EditPlan plan = cfg.edit_plan(models.encoder.cfg.n_layers);
  const auto rows = alpha_sweep(models.encoder, b.vocab, payloads, covs, plan, alphas);
  std::ostringstream csv;
  csv << "alpha,edit_residual,preservation_residual\n";
  for (const auto& r : rows)
    csv << format_double(r.alpha) << ',' << format_double(r.edit_residual) << ','
        << format_double(r.preservation_residual) << '\n';
  const std::string path = out_path(cfg, "alpha_sweep.csv");
  write_text_file(path, csv.str());
  write_provenance(cfg, path, {model_ckpt, payloads_ckpt, cov_ckpt});
  std::cout << csv.str() << "report=" << path << "\n";
  return 0;
}

int cmd_sweep_layers(const RunConfig& cfg, const std::string& model_ckpt,
                     const std::string& payloads_ckpt, const std::string& cov_ckpt,
                     const std::string& requests_path, const std::string& ranges_spec) {
  cfg.validate();
  Bundle b(cfg);
  const ModelPair models = take_model_pair(Checkpoint::load(model_ckpt));
  const std::vector<LayerEditPayload> payloads = take_payloads(Checkpoint::load(payloads_ckpt));
  const auto covs = take_covariances(Checkpoint::load(cov_ckpt));
  const std::vector<EditRequest> requests = load_edit_requests(requests_path);
  const auto ranges = parse_ranges(ranges_spec);
  const auto rows =
      ablate_layers({models.encoder, models.denoiser}, b.schedule, b.vocab, payloads, requests,
                    covs, ranges, edit_pairs(requests), b.registry, b.oracle,
                    sampling_config(cfg), cfg.edit_alpha, cfg.recompute_keys);
  std::ostringstream csv;
  csv << "range,s2d_generalization,hd,f1\n";
  for (const auto& r : rows)
    csv << r.lo << '-' << r.hi << ',' << format_double(r.s2d_gen) << ',' << format_double(r.hd)
        << ',' << format_double(r.f1) << '\n';
  const std::string path = out_path(cfg, "layer_sweep.csv");
  write_text_file(path, csv.str());
  write_provenance(cfg, path, {model_ckpt, payloads_ckpt, cov_ckpt, requests_path});
  std::cout << csv.str() << "report=" << path << "\n";
  return 0;
}

int cmd_sweep_scale(const RunConfig& cfg, const std::string& model_ckpt,
                    const std::string& payloads_ckpt, const std::string& cov_ckpt,
                    const std::string& requests_path, const std::vector<int>& counts) {
  cfg.validate();
  Bundle b(cfg);
  const ModelPair models = take_model_pair(Checkpoint::load(model_ckpt));
  const std::vector<LayerEditPayload> payloads = take_payloads(Checkpoint::load(payloads_ckpt));
  const auto covs = take_covariances(Checkpoint::load(cov_ckpt));
  const std::vector<EditRequest> requests = load_edit_requests(requests_path);
  const EditPlan plan = cfg.edit_plan(models.encoder.cfg.n_layers);

  std::ostringstream csv;
  csv << "edits,sf,s2d_efficacy,s2d_generalization,al2d,hd,f1\n";
  for (int n : counts) {
    if (n < 0 || n > int(requests.size()))
      throw ConfigError("sweep-scale: count " + std::to_string(n) + " exceeds request list");
    const std::vector<EditRequest> subset(requests.begin(), requests.begin() + n);
    std::vector<LayerEditPayload> subset_payloads;
    for (const auto& p : payloads)
      for (const auto& r : subset)
        if (p.concept_id == r.concept_id) subset_payloads.push_back(p);
    auto [edited, report] =
        edit_model(models.encoder, b.vocab, subset_payloads, subset, plan, covs);
    const ModelPair post{std::move(edited), models.denoiser};
    const MetricsReport m = compute_metrics({models.encoder, models.denoiser}, post, b.schedule,
                                            b.vocab, edit_pairs(subset), b.registry, b.oracle,
                                            sampling_config(cfg));
    csv << n << ',' << format_double(m.sf) << ',' << format_double(m.s2d_efficacy) << ','
        << format_double(m.s2d_generalization) << ',' << format_double(m.al2d) << ','
        << format_double(m.hd) << ',' << format_double(m.f1) << '\n';
  }
  const std::string path = out_path(cfg, "scale_sweep.csv");
  write_text_file(path, csv.str());
  write_provenance(cfg, path, {model_ckpt, payloads_ckpt, cov_ckpt, requests_path});
  std::cout << csv.str() << "report=" << path << "\n";
  return 0;
}

}  // namespace emcid
