#include "emcid/schedule.hpp"

#include <cmath>
#include <string>

#include "emcid/errors.hpp"

namespace emcid {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw ConfigError("noise schedule needs at least one step");
  if (!(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0))
    throw ConfigError("betas must satisfy 0 < beta_min < beta_max < 1");
  std::vector<double> betas(steps);
  for (int i = 0; i < steps; ++i)
    betas[i] = steps == 1 ? beta_min : beta_min + (beta_max - beta_min) * i / double(steps - 1);
  std::vector<double> bars(steps + 1);
  bars[0] = 1.0;
  for (int t = 1; t <= steps; ++t) bars[t] = bars[t - 1] * (1.0 - betas[t - 1]);
  return NoiseSchedule(std::move(betas), std::move(bars));
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > steps())
    throw TimestepOutOfRange("t=" + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps())
    throw TimestepOutOfRange("t=" + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
  return alpha_bars_[t];
}

Matrix NoiseSchedule::add_noise(const Matrix& x0, int t, const Matrix& eps) const {
  if (!x0.same_shape(eps)) throw DimensionMismatch("add_noise: x0 and eps shapes differ");
  const double ab = alpha_bar(t);
  if (t < 1) throw TimestepOutOfRange("add_noise: t must be >= 1");
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Matrix out = x0;
  double* od = out.data();
  const double* ed = eps.data();
  for (size_t i = 0; i < out.size(); ++i) od[i] = a * od[i] + b * ed[i];
  return out;
}

}  // namespace emcid
