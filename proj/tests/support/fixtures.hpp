#pragma once

#include "tarec/corpus.hpp"
#include "tarec/nets.hpp"
#include "tarec/synthetic.hpp"

namespace tarec::testing {

/// Synthetic log pushed through filtering, windowing and the chronological split.
inline PreparedData synthetic_dataset(const SyntheticSpec& spec, int L = 10, int min_item_count = 5,
                                      int min_seq_len = 3) {
  FilterResult r = filter_and_build(generate_synthetic(spec), min_item_count, min_seq_len);
  std::vector<SequenceExample> all;
  for (const auto& h : r.histories) {
    auto ex = window_and_pad(h, L, min_seq_len, r.corpus.pad_index());
    all.insert(all.end(), ex.begin(), ex.end());
  }
  PreparedData data;
  data.corpus = std::move(r.corpus);
  data.split = chronological_split(std::move(all));
  data.seq_len = L;
  return data;
}

inline PreparedData tiny_dataset(int users = 120, int items = 20, int L = 4, std::uint64_t seed = 7) {
  SyntheticSpec spec;
  spec.users = users;
  spec.items = items;
  spec.seed = seed;
  return synthetic_dataset(spec, L);
}

inline ModelConfig tiny_model(const PreparedData& data, int dim = 4) {
  ModelConfig c;
  c.num_items = static_cast<int>(data.corpus.size());
  c.dim = dim;
  c.seq_len = data.seq_len;
  c.ff_mult = 2;
  c.denoiser_hidden_mult = 2;
  return c;
}

}  // namespace tarec::testing
