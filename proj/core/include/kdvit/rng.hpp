// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace kdvit {

// Seeded random stream. The engine is std::mt19937_64; the variate
// transforms are written out here because the standard distributions are
// implementation-defined and we want identical draws on every toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  // Derive an independent child stream, e.g. one per repeat or per epoch.
  Rng fork(std::uint64_t salt);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// 64-bit mixing function, used to combine seeds and salts.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace kdvit
