#pragma once

#include <cstdint>
#include <vector>

#include "tarec/corpus.hpp"

namespace tarec {

/// Markov preference process: every user belongs to a cluster; each cluster
/// owns a sparse item-to-item transition table. With probability `noise` a
/// step jumps to a uniformly random item instead.
struct SyntheticSpec {
  int users = 3000;
  int items = 200;
  int clusters = 2;
  int successors = 2;
  int min_len = 4;
  int max_len = 10;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

std::vector<Interaction> generate_synthetic(const SyntheticSpec& spec);

}  // namespace tarec
