#include "emcid/denoiser.hpp"

#include <cmath>

namespace emcid {

DenoiserModel init_denoiser(const DenoiserConfig& cfg, Rng& rng) {
  DenoiserModel m;
  m.cfg = cfg;
  const double in_std = 1.0 / std::sqrt(double(cfg.x_dim));
  const double h_std = 1.0 / std::sqrt(double(cfg.hidden));
  m.w_x = rng.normal_matrix(cfg.hidden, cfg.x_dim, in_std);
  m.w_t = rng.normal_matrix(cfg.hidden, cfg.t_dim, 1.0 / std::sqrt(double(cfg.t_dim)));
  m.w_c = rng.normal_matrix(cfg.hidden, cfg.c_dim, 1.0 / std::sqrt(double(cfg.c_dim)));
  m.b_in = Matrix(1, cfg.hidden);
  m.blocks.resize(cfg.blocks);
  for (auto& b : m.blocks) {
    b.w1 = rng.normal_matrix(cfg.hidden, cfg.hidden, h_std);
    b.b1 = Matrix(1, cfg.hidden);
    // Residual branches start near zero so the initial map is close to
    // identity in the hidden state.
    b.w2 = rng.normal_matrix(cfg.hidden, cfg.hidden, 0.1 * h_std);
    b.b2 = Matrix(1, cfg.hidden);
  }
  m.w_out = rng.normal_matrix(cfg.x_dim, cfg.hidden, h_std);
  m.b_out = Matrix(1, cfg.x_dim);
  return m;
}

std::vector<Matrix*> denoiser_params(DenoiserModel& m) {
  std::vector<Matrix*> p{&m.w_x, &m.w_t, &m.w_c, &m.b_in};
  for (auto& b : m.blocks)
    for (Matrix* w : {&b.w1, &b.b1, &b.w2, &b.b2}) p.push_back(w);
  p.push_back(&m.w_out);
  p.push_back(&m.b_out);
  return p;
}

std::vector<std::pair<std::string, const Matrix*>> denoiser_named_params(const DenoiserModel& m) {
  std::vector<std::pair<std::string, const Matrix*>> p;
  p.emplace_back("denoiser/w_x", &m.w_x);
  p.emplace_back("denoiser/w_t", &m.w_t);
  p.emplace_back("denoiser/w_c", &m.w_c);
  p.emplace_back("denoiser/b_in", &m.b_in);
  for (size_t i = 0; i < m.blocks.size(); ++i) {
    const std::string prefix = "denoiser/block_" + std::to_string(i) + "/";
    p.emplace_back(prefix + "w1", &m.blocks[i].w1);
    p.emplace_back(prefix + "b1", &m.blocks[i].b1);
    p.emplace_back(prefix + "w2", &m.blocks[i].w2);
    p.emplace_back(prefix + "b2", &m.blocks[i].b2);
  }
  p.emplace_back("denoiser/w_out", &m.w_out);
  p.emplace_back("denoiser/b_out", &m.b_out);
  return p;
}

DenoiserNodes bind_denoiser(GradTape& tape, const DenoiserModel& m, bool trainable) {
  DenoiserNodes n;
  n.cfg = &m.cfg;
  auto bind = [&](const Matrix& w) {
    const NodeId id = trainable ? tape.leaf(w) : tape.constant(w);
    if (trainable) n.leaves.push_back(id);
    return id;
  };
  n.w_x = bind(m.w_x);
  n.w_t = bind(m.w_t);
  n.w_c = bind(m.w_c);
  n.b_in = bind(m.b_in);
  for (const auto& b : m.blocks)
    n.blocks.push_back({bind(b.w1), bind(b.b1), bind(b.w2), bind(b.b2)});
  n.w_out = bind(m.w_out);
  n.b_out = bind(m.b_out);
  return n;
}

NodeId denoiser_forward(GradTape& tape, const DenoiserNodes& nodes, NodeId x, NodeId temb,
                        NodeId cond) {
  const Matrix& xv = tape.value(x);
  const Matrix& cv = tape.value(cond);
  if (xv.cols() != nodes.cfg->x_dim) throw DimensionMismatch("denoiser: x dim");
  if (cv.cols() != nodes.cfg->c_dim) throw DimensionMismatch("denoiser: condition dim");

  NodeId h = tape.add(tape.matmul_nt(x, nodes.w_x), tape.matmul_nt(temb, nodes.w_t));
  NodeId cproj = tape.matmul_nt(cond, nodes.w_c);
  h = cv.rows() == 1 ? tape.add_row_broadcast(h, cproj) : tape.add(h, cproj);
  h = tape.add_row_broadcast(h, nodes.b_in);
  for (const auto& b : nodes.blocks) {
    NodeId inner = tape.gelu(tape.add_row_broadcast(tape.matmul_nt(h, b.w1), b.b1));
    h = tape.add(h, tape.add_row_broadcast(tape.matmul_nt(inner, b.w2), b.b2));
  }
  return tape.add_row_broadcast(tape.matmul_nt(h, nodes.w_out), nodes.b_out);
}

Matrix time_embedding(int t, int dim) {
  const int ts[] = {t};
  return time_embedding_batch(ts, dim);
}

Matrix time_embedding_batch(std::span<const int> ts, int dim) {
  const int half = dim / 2;
  Matrix out(int(ts.size()), dim);
  for (size_t i = 0; i < ts.size(); ++i) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / std::max(1, half - 1));
      out(int(i), 2 * k) = std::sin(ts[i] * freq);
      out(int(i), 2 * k + 1) = std::cos(ts[i] * freq);
    }
  }
  return out;
}

Matrix predict_noise(const DenoiserModel& m, const Matrix& x_t, const Matrix& cond, int t) {
  if (t < 1) throw TimestepOutOfRange("predict_noise: t must be >= 1");
  std::vector<int> ts(x_t.rows(), t);
  return predict_noise_batch(m, x_t, cond, ts);
}

Matrix predict_noise_batch(const DenoiserModel& m, const Matrix& x_t, const Matrix& cond,
                           std::span<const int> ts) {
  if (int(ts.size()) != x_t.rows())
    throw DimensionMismatch("predict_noise_batch: one timestep per row required");
  for (int t : ts)
    if (t < 1) throw TimestepOutOfRange("predict_noise_batch: t must be >= 1");
  GradTape tape;
  const DenoiserNodes nodes = bind_denoiser(tape, m, false);
  const NodeId x = tape.constant(x_t);
  const NodeId temb = tape.constant(time_embedding_batch(ts, m.cfg.t_dim));
  const NodeId c = tape.constant(cond);
  return tape.value(denoiser_forward(tape, nodes, x, temb, c));
}

Matrix sample_images(const DenoiserModel& m, const NoiseSchedule& schedule, const Matrix& cond,
                     int n, int steps, uint64_t seed) {
  if (steps != schedule.steps())
    throw ConfigError("sample: steps must equal the schedule length");
  if (n < 1) throw ConfigError("sample: need n >= 1");
  const int T = schedule.steps();
  const int d = m.cfg.x_dim;

  // One stream per image so batched sampling is bit-identical to n
  // independent single-image runs.
  std::vector<Rng> streams;
  streams.reserve(n);
  for (int i = 0; i < n; ++i) streams.emplace_back(derive_seed(seed, uint64_t(i)));

  Matrix x(n, d);
  for (int i = 0; i < n; ++i) {
    double* xi = x.row(i);
    for (int j = 0; j < d; ++j) xi[j] = streams[i].normal();
  }

  for (int t = T; t >= 1; --t) {
    const Matrix eps_hat = predict_noise(m, x, cond, t);
    const double beta = schedule.beta(t);
    const double ab_t = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t - 1);
    const double noise_coef = beta / std::sqrt(1.0 - ab_t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    const double sigma = t > 1 ? std::sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta) : 0.0;
    for (int i = 0; i < n; ++i) {
      double* xi = x.row(i);
      const double* ei = eps_hat.row(i);
      for (int j = 0; j < d; ++j) xi[j] = inv_sqrt_alpha * (xi[j] - noise_coef * ei[j]);
      if (t > 1)
        for (int j = 0; j < d; ++j) xi[j] += sigma * streams[i].normal();
    }
  }
  return x;
}

Matrix sample_image(const DenoiserModel& m, const NoiseSchedule& schedule, const Matrix& cond,
                    int steps, uint64_t seed) {
  return sample_images(m, schedule, cond, 1, steps, seed);
}

}  // namespace emcid
