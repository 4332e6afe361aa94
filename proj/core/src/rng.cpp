#include "tarec/rng.hpp"

namespace tarec {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Rng make_rng(std::uint64_t seed, std::string_view component) {
  std::uint64_t h = fnv1a(component);
  h ^= seed + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Rng(seq);
}

Matrix gaussian(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = dist(rng);
  return m;
}

}  // namespace tarec
