#include <doctest.h>

#include <cmath>

#include "emcid/commands.hpp"
#include "emcid/gradcheck.hpp"
#include "emcid/stage1.hpp"

using namespace emcid;

namespace {

const std::string kData = EMCID_DATA_DIR;

struct Fixture {
  Vocabulary vocab = Vocabulary::load(kData + "/vocab.txt");
  EncoderModel encoder;
  DenoiserModel denoiser;
  NoiseSchedule schedule = NoiseSchedule::linear(20, 1e-4, 0.05);

  Fixture() {
    Rng rng(71);
    EncoderConfig ecfg;
    encoder = init_encoder(ecfg, vocab.size(), rng);
    denoiser = init_denoiser(DenoiserConfig{}, rng);
  }

  EditRequest prompt_request() const {
    EditRequest r;
    r.concept_id = "red_square";
    r.subject = "red square";
    r.source_prompts = {"an image of a red square", "a photo of a red square"};
    r.dest_prompts = {"an image of a blue circle", "a photo of a blue circle"};
    return r;
  }

  Stage1Config fast_config() const {
    Stage1Config cfg;
    cfg.steps = 20;
    cfg.noise_images = 2;
    cfg.noise_timesteps = 2;
    cfg.seed = 9;
    return cfg;
  }
};

}  // namespace

TEST_CASE("request validation") {
  Fixture f;
  EditRequest r = f.prompt_request();
  r.source_prompts.clear();
  CHECK_THROWS_AS(Stage1Context(f.encoder, f.denoiser, f.schedule, f.vocab, r, f.fast_config()),
                  ConfigError);
  r = f.prompt_request();
  r.dest_images.push_back(Matrix(1, kImagePixels));
  CHECK_THROWS_AS(Stage1Context(f.encoder, f.denoiser, f.schedule, f.vocab, r, f.fast_config()),
                  ConfigError);
  r = f.prompt_request();
  r.dest_prompts.pop_back();
  CHECK_THROWS_AS(Stage1Context(f.encoder, f.denoiser, f.schedule, f.vocab, r, f.fast_config()),
                  ConfigError);
  r = f.prompt_request();
  r.subject = "green cross";
  CHECK_THROWS_AS(Stage1Context(f.encoder, f.denoiser, f.schedule, f.vocab, r, f.fast_config()),
                  SubjectNotFound);
}

TEST_CASE("loss_txt identities") {
  Fixture f;
  EditRequest same = f.prompt_request();
  same.dest_prompts = same.source_prompts;
  Stage1Context ctx_same(f.encoder, f.denoiser, f.schedule, f.vocab, same, f.fast_config());
  const Matrix zero(1, f.encoder.cfg.d_model);
  CHECK(ctx_same.loss_txt(1, zero) == 0.0);

  const EditRequest r = f.prompt_request();
  Stage1Context ctx(f.encoder, f.denoiser, f.schedule, f.vocab, r, f.fast_config());
  double expected = 0.0;
  for (size_t i = 0; i < r.source_prompts.size(); ++i) {
    const Matrix d = sub(encode(f.encoder, f.vocab, r.source_prompts[i]),
                         encode(f.encoder, f.vocab, r.dest_prompts[i]));
    expected += sum_squares(d);
  }
  expected /= double(r.source_prompts.size());
  CHECK(ctx.loss_txt(2, zero) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("loss_txt gradient matches finite differences") {
  Fixture f;
  Stage1Context ctx(f.encoder, f.denoiser, f.schedule, f.vocab, f.prompt_request(),
                    f.fast_config());
  Rng rng(1);
  const Matrix delta = rng.normal_matrix(1, f.encoder.cfg.d_model, 0.3);
  const auto eval = ctx.objective_with_grad(2, delta, nullptr, Objective::TextOnly);
  const Matrix fd = finite_diff_grad(
      [&](const Matrix& d) { return ctx.loss_txt(2, d); }, delta, 1e-5);
  CHECK(max_rel_error(eval.grad, fd) <= 1e-4);
}

TEST_CASE("loss_noise identities and determinism") {
  Fixture f;
  EditRequest same = f.prompt_request();
  same.dest_prompts = same.source_prompts;
  Stage1Context ctx(f.encoder, f.denoiser, f.schedule, f.vocab, same, f.fast_config());
  const NoiseBatch batch = ctx.sample_batch(123);
  const Matrix zero(1, f.encoder.cfg.d_model);
  CHECK(ctx.loss_noise(1, zero, batch) == 0.0);

  Stage1Context ctx2(f.encoder, f.denoiser, f.schedule, f.vocab, f.prompt_request(),
                     f.fast_config());
  const NoiseBatch b1 = ctx2.sample_batch(77);
  const NoiseBatch b2 = ctx2.sample_batch(77);
  Rng rng(3);
  const Matrix delta = rng.normal_matrix(1, f.encoder.cfg.d_model, 0.2);
  CHECK(ctx2.loss_noise(1, delta, b1) == ctx2.loss_noise(1, delta, b2));
}

TEST_CASE("loss_noise gradient matches finite differences on a fixed batch") {
  Fixture f;
  Stage1Context ctx(f.encoder, f.denoiser, f.schedule, f.vocab, f.prompt_request(),
                    f.fast_config());
  const NoiseBatch batch = ctx.sample_batch(55);
  Rng rng(4);
  const Matrix delta = rng.normal_matrix(1, f.encoder.cfg.d_model, 0.2);
  const auto eval = ctx.objective_with_grad(1, delta, &batch, Objective::NoiseOnly);
  const Matrix fd = finite_diff_grad(
      [&](const Matrix& d) { return ctx.loss_noise(1, d, batch); }, delta, 1e-5);
  CHECK(max_rel_error(eval.grad, fd) <= 1e-4);
}

TEST_CASE("loss_image determinism and gradient") {
  Fixture f;
  EditRequest r = f.prompt_request();
  r.dest_prompts.clear();
  Rng rng(8);
  r.dest_images.push_back(render_shape(ShapeKind::Circle, color_from_name("blue"), 0, 0));
  r.dest_images.push_back(render_shape(ShapeKind::Circle, color_from_name("blue"), 1, 0));
  Stage1Context ctx(f.encoder, f.denoiser, f.schedule, f.vocab, r, f.fast_config());
  const NoiseBatch b1 = ctx.sample_batch(99);
  const Matrix delta = rng.normal_matrix(1, f.encoder.cfg.d_model, 0.2);
  CHECK(ctx.loss_image(1, delta, b1) == ctx.loss_image(1, delta, ctx.sample_batch(99)));

  const auto eval = ctx.objective_with_grad(1, delta, &b1, Objective::NoiseOnly);
  const Matrix fd = finite_diff_grad(
      [&](const Matrix& d) { return ctx.loss_image(1, d, b1); }, delta, 1e-5);
  CHECK(max_rel_error(eval.grad, fd) <= 1e-4);
}

TEST_CASE("loss_image self-consistency with the denoising objective") {
  // With images drawn from the source concept itself and delta = 0, the
  // image loss estimates the same expectation as the plain denoising MSE
  // (up to the sum-vs-mean pixel normalization).
  Fixture f;
  EditRequest r = f.prompt_request();
  r.dest_prompts.clear();
  Rng jitter_rng(10);
  for (int i = 0; i < 4; ++i)
    r.dest_images.push_back(render_sample(ShapeKind::Square, color_from_name("red"), jitter_rng));

  Stage1Config cfg = f.fast_config();
  cfg.noise_images = 4;
  cfg.noise_timesteps = 2;
  Stage1Context ctx(f.encoder, f.denoiser, f.schedule, f.vocab, r, cfg);
  const Matrix zero(1, f.encoder.cfg.d_model);

  std::vector<double> image_losses, direct_losses;
  const Matrix cond = encode(f.encoder, f.vocab, r.source_prompts[0]);
  Rng direct_rng(500);
  for (uint64_t s = 0; s < 20; ++s) {
    image_losses.push_back(ctx.loss_image(1, zero, ctx.sample_batch(1000 + s)) / kImagePixels);
    // Direct denoising MSE with matching sample counts.
    double acc = 0.0;
    const int rows = cfg.noise_images * cfg.noise_timesteps;
    for (int i = 0; i < rows; ++i) {
      const Matrix& x0 = r.dest_images[direct_rng.below(r.dest_images.size())];
      const int t = 1 + int(direct_rng.below(uint64_t(f.schedule.steps())));
      Matrix eps(1, kImagePixels);
      for (int c = 0; c < kImagePixels; ++c) eps(0, c) = direct_rng.normal();
      const Matrix xt = f.schedule.add_noise(x0, t, eps);
      acc += sum_squares(sub(predict_noise(f.denoiser, xt, cond, t), eps));
    }
    direct_losses.push_back(acc / rows / kImagePixels);
  }
  double m1 = 0.0, m2 = 0.0, v1 = 0.0, v2 = 0.0;
  for (double x : image_losses) m1 += x / image_losses.size();
  for (double x : direct_losses) m2 += x / direct_losses.size();
  for (double x : image_losses) v1 += (x - m1) * (x - m1) / image_losses.size();
  for (double x : direct_losses) v2 += (x - m2) * (x - m2) / direct_losses.size();
  const double sigma = std::sqrt((v1 + v2) / 20.0);
  CHECK(std::abs(m1 - m2) <= 2.0 * sigma + 1e-9);
}

TEST_CASE("optimize_value identity edit stays at zero") {
  Fixture f;
  EditRequest r = f.prompt_request();
  r.dest_prompts = r.source_prompts;
  const LayerEditPayload p =
      optimize_value(f.encoder, f.denoiser, f.schedule, f.vocab, r, 1, f.fast_config());
  CHECK(frobenius_norm(p.delta) <= 1e-6);
  CHECK(p.new_value == p.value);  // v* - v == delta == 0 exactly
}

TEST_CASE("optimize_value rejects the last layer when the text loss is active") {
  Fixture f;
  const int last = f.encoder.cfg.n_layers - 1;
  CHECK_THROWS_AS(optimize_value(f.encoder, f.denoiser, f.schedule, f.vocab, f.prompt_request(),
                                 last, f.fast_config()),
                  LastLayerWithTextLoss);
  Stage1Config noise_only = f.fast_config();
  noise_only.objective = Objective::NoiseOnly;
  const LayerEditPayload p = optimize_value(f.encoder, f.denoiser, f.schedule, f.vocab,
                                            f.prompt_request(), last, noise_only);
  // No gradient path: the [EOS] row never sees the hooked position.
  CHECK(frobenius_norm(p.delta) == 0.0);
}

TEST_CASE("optimize_value makes progress and never ends worse than zero") {
  Fixture f;
  Stage1Config cfg = f.fast_config();
  cfg.objective = Objective::TextOnly;
  cfg.steps = 60;
  EditRequest r = f.prompt_request();
  Stage1Context ctx(f.encoder, f.denoiser, f.schedule, f.vocab, r, cfg);
  const LayerEditPayload p = ctx.optimize(2);
  const Matrix zero(1, f.encoder.cfg.d_model);
  CHECK(ctx.loss_txt(2, p.delta) <= ctx.loss_txt(2, zero));
  CHECK(frobenius_norm(p.delta) > 0.0);
  const Matrix expected_delta = sub(p.new_value, p.value);
  CHECK(expected_delta == p.delta);
}

TEST_CASE("payloads are identical for any worker count and concept order") {
  Fixture f;
  Stage1Config cfg = f.fast_config();
  cfg.objective = Objective::TextOnly;
  cfg.steps = 10;
  EditRequest a = f.prompt_request();
  EditRequest b = f.prompt_request();
  b.concept_id = "green_circle";
  b.subject = "green circle";
  b.source_prompts = {"an image of a green circle", "a photo of a green circle"};
  b.dest_prompts = {"an image of a red cross", "a photo of a red cross"};

  const ModelPair models{f.encoder, f.denoiser};
  const auto run = [&](std::vector<EditRequest> reqs, int workers) {
    return run_stage1(models, f.schedule, f.vocab, reqs, cfg, {1, 2}, workers);
  };
  const auto p1 = run({a, b}, 1);
  const auto p4 = run({a, b}, 4);
  REQUIRE(p1.size() == p4.size());
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].delta == p4[i].delta);

  // Permuting the request order permutes results but leaves each payload
  // identical per (concept, layer).
  const auto swapped = run({b, a}, 2);
  for (const auto& p : p1) {
    bool found = false;
    for (const auto& q : swapped)
      if (q.concept_id == p.concept_id && q.layer == p.layer) {
        CHECK(q.delta == p.delta);
        found = true;
      }
    CHECK(found);
  }
}
