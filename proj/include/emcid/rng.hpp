#pragma once

#include <cstdint>
#include <string_view>

#include "emcid/matrix.hpp"

namespace emcid {

// SplitMix64 stream generator. The output at step i is a bijective hash of
// (seed + i*gamma), so the generator is counter-based: identical seeds give
// identical streams, and derived streams (see derive) are statistically
// independent for distinct tags. Splitting is done by hashing the parent
// seed with a tag, the scheme JAX-style key derivation uses.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller (two uniforms per call, no caching).
  double normal();
  // Uniform integer in [0, n).
  uint64_t below(uint64_t n);

  Matrix normal_matrix(int rows, int cols, double stddev = 1.0);
  Matrix uniform_matrix(int rows, int cols, double lo, double hi);

  // Child generator for an independent stream.
  Rng split(uint64_t tag) const;

  uint64_t seed() const { return state_; }

 private:
  uint64_t state_;
};

// Stateless seed derivation: mixes a parent seed with tag values. Used to
// give every (concept, prompt, sample, ...) cell its own stream so results
// do not depend on evaluation order or worker count.
uint64_t derive_seed(uint64_t parent, uint64_t tag);
uint64_t derive_seed(uint64_t parent, uint64_t tag_a, uint64_t tag_b);
uint64_t derive_seed(uint64_t parent, uint64_t tag_a, uint64_t tag_b, uint64_t tag_c);
uint64_t hash_string(std::string_view s);

}  // namespace emcid
