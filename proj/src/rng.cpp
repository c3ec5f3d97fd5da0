#include "emcid/rng.hpp"

#include <cmath>
#include <numbers>

namespace emcid {

namespace {
constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ull;

uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace

uint64_t Rng::next_u64() {
  state_ += kGamma;
  return mix64(state_);
}

double Rng::uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // Box-Muller; guard against log(0).
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

uint64_t Rng::below(uint64_t n) {
  // Rejection-free modulo is fine here: n is tiny relative to 2^64.
  return next_u64() % n;
}

Matrix Rng::normal_matrix(int rows, int cols, double stddev) {
  Matrix m(rows, cols);
  double* d = m.data();
  for (size_t i = 0; i < m.size(); ++i) d[i] = stddev * normal();
  return m;
}

Matrix Rng::uniform_matrix(int rows, int cols, double lo, double hi) {
  Matrix m(rows, cols);
  double* d = m.data();
  for (size_t i = 0; i < m.size(); ++i) d[i] = uniform(lo, hi);
  return m;
}

Rng Rng::split(uint64_t tag) const { return Rng(derive_seed(state_, tag)); }

uint64_t derive_seed(uint64_t parent, uint64_t tag) {
  return mix64(parent ^ mix64(tag + kGamma));
}

uint64_t derive_seed(uint64_t parent, uint64_t tag_a, uint64_t tag_b) {
  return derive_seed(derive_seed(parent, tag_a), tag_b);
}

uint64_t derive_seed(uint64_t parent, uint64_t tag_a, uint64_t tag_b, uint64_t tag_c) {
  return derive_seed(derive_seed(parent, tag_a, tag_b), tag_c);
}

uint64_t hash_string(std::string_view s) {
  // FNV-1a 64.
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace emcid
