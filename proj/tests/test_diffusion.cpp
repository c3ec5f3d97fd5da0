#include <doctest.h>

#include <cmath>

#include "emcid/denoiser.hpp"
#include "emcid/gradcheck.hpp"
#include "emcid/registry.hpp"
#include "emcid/training.hpp"
#include "emcid/vocab.hpp"

using namespace emcid;

namespace {

const std::string kData = EMCID_DATA_DIR;

DenoiserModel small_denoiser(uint64_t seed = 3) {
  Rng rng(seed);
  DenoiserConfig cfg;
  return init_denoiser(cfg, rng);
}

}  // namespace

TEST_CASE("schedule invariants") {
  const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  CHECK(s.alpha_bar(0) == 1.0);
  double prev_beta = 0.0;
  for (int t = 1; t <= 50; ++t) {
    CHECK(s.beta(t) > prev_beta);
    CHECK(s.beta(t) < 1.0);
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    prev_beta = s.beta(t);
  }
  CHECK_THROWS_AS(s.beta(0), TimestepOutOfRange);
  CHECK_THROWS_AS(s.beta(51), TimestepOutOfRange);
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.2, 0.1), ConfigError);
}

TEST_CASE("add_noise deterministic branch and boundary") {
  const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  Rng rng(5);
  const Matrix x0 = rng.uniform_matrix(1, kImagePixels, -1.0, 1.0);
  const Matrix zero(1, kImagePixels);
  const Matrix xt = s.add_noise(x0, 10, zero);
  const double a = std::sqrt(s.alpha_bar(10));
  for (int c = 0; c < kImagePixels; ++c) CHECK(xt(0, c) == doctest::Approx(a * x0(0, c)));

  const Matrix eps = rng.normal_matrix(1, kImagePixels);
  const Matrix x1 = s.add_noise(x0, 1, eps);
  const double bound = (1.0 - std::sqrt(s.alpha_bar(1))) * frobenius_norm(x0) +
                       std::sqrt(1.0 - s.alpha_bar(1)) * frobenius_norm(eps);
  CHECK(frobenius_norm(sub(x1, x0)) <= bound + 1e-12);

  CHECK_THROWS_AS(s.add_noise(x0, 0, eps), TimestepOutOfRange);
  CHECK_THROWS_AS(s.add_noise(x0, 51, eps), TimestepOutOfRange);
}

TEST_CASE("add_noise preserves unit variance (Monte Carlo)") {
  const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  Rng rng(2025);
  double sum = 0.0, sum_sq = 0.0;
  long n = 0;
  for (int draw = 0; draw < 200; ++draw) {
    const Matrix x0 = rng.normal_matrix(1, 50);
    const Matrix eps = rng.normal_matrix(1, 50);
    const int t = 1 + int(rng.below(50));
    const Matrix xt = s.add_noise(x0, t, eps);
    for (size_t i = 0; i < xt.size(); ++i) {
      sum += xt.data()[i];
      sum_sq += xt.data()[i] * xt.data()[i];
      ++n;
    }
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("predict_noise determinism and validation") {
  const DenoiserModel m = small_denoiser();
  Rng rng(6);
  const Matrix x = rng.normal_matrix(1, kImagePixels);
  const Matrix c = rng.normal_matrix(1, m.cfg.c_dim);
  const Matrix p1 = predict_noise(m, x, c, 7);
  CHECK(p1 == predict_noise(m, x, c, 7));
  CHECK(p1.cols() == kImagePixels);
  CHECK_THROWS_AS(predict_noise(m, x, rng.normal_matrix(1, 5), 7), DimensionMismatch);
  CHECK_THROWS_AS(predict_noise(m, x, c, 0), TimestepOutOfRange);
}

TEST_CASE("denoiser output gradient w.r.t. condition matches finite differences") {
  const DenoiserModel m = small_denoiser(11);
  Rng rng(12);
  const Matrix x = rng.normal_matrix(3, kImagePixels);
  const Matrix temb = time_embedding_batch(std::vector<int>{3, 9, 21}, m.cfg.t_dim);
  const Matrix target = rng.normal_matrix(3, kImagePixels);
  const Matrix c0 = rng.normal_matrix(1, m.cfg.c_dim);

  GradTape tape;
  const DenoiserNodes nodes = bind_denoiser(tape, m, false);
  const NodeId c = tape.leaf(c0);
  const NodeId pred = denoiser_forward(tape, nodes, tape.constant(x), tape.constant(temb), c);
  const NodeId loss = tape.sum_sq(tape.sub(pred, tape.constant(target)));
  auto result = tape.backward(loss, {c});

  const auto f = [&](const Matrix& cv) {
    GradTape t2;
    const DenoiserNodes n2 = bind_denoiser(t2, m, false);
    const NodeId pred2 =
        denoiser_forward(t2, n2, t2.constant(x), t2.constant(temb), t2.constant(cv));
    return t2.value(t2.sum_sq(t2.sub(pred2, t2.constant(target))))(0, 0);
  };
  CHECK(max_rel_error(result.grads[0], finite_diff_grad(f, c0, 1e-5)) <= 1e-4);
}

TEST_CASE("train_denoiser overfits a single sample") {
  const Vocabulary vocab = Vocabulary::load(kData + "/vocab.txt");
  Rng rng(31);
  EncoderConfig ecfg;
  const EncoderModel enc = init_encoder(ecfg, vocab.size(), rng);
  const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  const Matrix img = render_shape(ShapeKind::Square, color_from_name("red"), 0, 0);

  TrainConfig cfg;
  cfg.steps = 500;
  cfg.batch = 8;
  cfg.lr = 3e-3;
  const DenoiserTrainResult r =
      train_denoiser({{img, "a red square"}}, enc, vocab, s, DenoiserConfig{}, cfg, 4);
  CHECK(r.final_loss < 0.05);
}

TEST_CASE("train_denoiser is seed-deterministic") {
  const Vocabulary vocab = Vocabulary::load(kData + "/vocab.txt");
  Rng rng(32);
  EncoderConfig ecfg;
  const EncoderModel enc = init_encoder(ecfg, vocab.size(), rng);
  const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  const Matrix img = render_shape(ShapeKind::Circle, color_from_name("blue"), 0, 0);
  TrainConfig cfg;
  cfg.steps = 40;
  cfg.batch = 4;
  DenoiserTrainResult a =
      train_denoiser({{img, "a blue circle"}}, enc, vocab, s, DenoiserConfig{}, cfg, 77);
  DenoiserTrainResult b =
      train_denoiser({{img, "a blue circle"}}, enc, vocab, s, DenoiserConfig{}, cfg, 77);
  const auto pa = denoiser_params(a.model);
  const auto pb = denoiser_params(b.model);
  for (size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i] == *pb[i]);
  CHECK_THROWS_AS(
      train_denoiser({}, enc, vocab, s, DenoiserConfig{}, cfg, 1), ConfigError);
}

TEST_CASE("doubling training steps does not hurt the smoothed loss") {
  const Vocabulary vocab = Vocabulary::load(kData + "/vocab.txt");
  Rng rng(33);
  EncoderConfig ecfg;
  const EncoderModel enc = init_encoder(ecfg, vocab.size(), rng);
  const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  std::vector<std::pair<Matrix, std::string>> data;
  data.emplace_back(render_shape(ShapeKind::Square, color_from_name("red"), 0, 0),
                    "a red square");
  data.emplace_back(render_shape(ShapeKind::Cross, color_from_name("green"), 0, 0),
                    "a green cross");

  double short_sum = 0.0, long_sum = 0.0;
  for (uint64_t seed : {101, 102, 103}) {
    TrainConfig cfg;
    cfg.batch = 8;
    cfg.steps = 120;
    short_sum += train_denoiser(data, enc, vocab, s, DenoiserConfig{}, cfg, seed).final_loss;
    cfg.steps = 240;
    long_sum += train_denoiser(data, enc, vocab, s, DenoiserConfig{}, cfg, seed).final_loss;
  }
  CHECK(long_sum / 3.0 <= short_sum / 3.0 * 1.05);
}

TEST_CASE("sampling is deterministic under a fixed seed") {
  const DenoiserModel m = small_denoiser(41);
  const NoiseSchedule s = NoiseSchedule::linear(50, 1e-4, 0.05);
  Rng rng(42);
  const Matrix c = rng.normal_matrix(1, m.cfg.c_dim);
  const Matrix a = sample_image(m, s, c, 50, 555);
  const Matrix b = sample_image(m, s, c, 50, 555);
  CHECK(a == b);
  CHECK_THROWS_AS(sample_image(m, s, c, 10, 555), ConfigError);

  // Batch rows match the prefix property.
  const Matrix batch = sample_images(m, s, c, 3, 50, 555);
  for (int col = 0; col < batch.cols(); ++col) CHECK(batch(0, col) == a(0, col));
}
