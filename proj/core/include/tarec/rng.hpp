#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "tarec/matrix.hpp"

namespace tarec {

using Rng = std::mt19937_64;

/// Derives an independent stream from a base seed and a component name, so
/// that e.g. changing the negative-sampling stream never perturbs init.
Rng make_rng(std::uint64_t seed, std::string_view component);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 14695981039346656037ULL);

Matrix gaussian(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0);

}  // namespace tarec
