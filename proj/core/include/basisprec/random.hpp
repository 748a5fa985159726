#pragma once

#include "basisprec/common.hpp"

#include <cstdint>
#include <random>

namespace basisprec {

using Rng = std::mt19937_64;

/// Independent streams per (global seed, run index, purpose).
enum class Stream : std::uint64_t { Init = 1, Gradient = 2, Curvature = 3, Eval = 4, Task = 5 };

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, Stream stream) {
  return splitmix64(splitmix64(splitmix64(seed) ^ index) ^ static_cast<std::uint64_t>(stream));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t index, Stream stream) {
  return Rng(derive_seed(seed, index, stream));
}

inline Matrix gaussian_matrix(Rng& rng, Index rows, Index cols, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  }
  return m;
}

inline Vector gaussian_vector(Rng& rng, Index n, double stddev = 1.0) {
  return gaussian_matrix(rng, n, 1, stddev);
}

}  // namespace basisprec
