#pragma once

#include <vector>

#include "emcid/matrix.hpp"

namespace emcid {

// Forward-noising coefficients of the toy DDPM chain. beta is strictly
// increasing in (0, 1); alpha_bar[t] = prod_{s<=t}(1 - beta_s) with
// alpha_bar[0] == 1.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps, double beta_min, double beta_max);

  int steps() const { return int(betas_.size()); }
  double beta(int t) const;          // t in [1, T]
  double alpha_bar(int t) const;     // t in [0, T]

  // x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
  Matrix add_noise(const Matrix& x0, int t, const Matrix& eps) const;

 private:
  NoiseSchedule(std::vector<double> betas, std::vector<double> alpha_bars)
      : betas_(std::move(betas)), alpha_bars_(std::move(alpha_bars)) {}
  std::vector<double> betas_;       // betas_[t-1] = beta_t
  std::vector<double> alpha_bars_;  // alpha_bars_[t] = alpha_bar_t, size T+1
};

}  // namespace emcid
