#include "tarec/synthetic.hpp"

#include <string>

#include "tarec/error.hpp"
#include "tarec/rng.hpp"

namespace tarec {

std::vector<Interaction> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.users < 1 || spec.items < 2 || spec.clusters < 1 || spec.successors < 1 ||
      spec.min_len < 1 || spec.max_len < spec.min_len || spec.noise < 0.0 || spec.noise > 1.0) {
    throw ConfigError("invalid synthetic corpus parameters");
  }
  Rng structure = make_rng(spec.seed, "synthetic.structure");
  Rng walk = make_rng(spec.seed, "synthetic.walk");
  std::uniform_int_distribution<int> any_item(0, spec.items - 1);

  // successor[c][i] = items a cluster-c user tends to pick after item i.
  std::vector<std::vector<std::vector<int>>> successor(
      static_cast<std::size_t>(spec.clusters),
      std::vector<std::vector<int>>(static_cast<std::size_t>(spec.items)));
  for (auto& table : successor) {
    for (auto& next : table) {
      for (int s = 0; s < spec.successors; ++s) next.push_back(any_item(structure));
    }
  }

  std::uniform_int_distribution<int> any_cluster(0, spec.clusters - 1);
  std::uniform_int_distribution<int> length(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> pick(0, spec.successors - 1);
  std::uniform_int_distribution<std::int64_t> start_time(0, 1'000'000);
  std::uniform_int_distribution<std::int64_t> gap(1, 1'000);
  std::bernoulli_distribution jump(spec.noise);

  std::vector<Interaction> out;
  for (int u = 0; u < spec.users; ++u) {
    const auto& table = successor[static_cast<std::size_t>(any_cluster(walk))];
    const int len = length(walk);
    std::int64_t ts = start_time(walk);
    int item = any_item(walk);
    const std::string user = "u" + std::to_string(u);
    for (int k = 0; k < len; ++k) {
      out.push_back({user, "i" + std::to_string(item), ts});
      ts += gap(walk);
      item = jump(walk) ? any_item(walk)
                        : table[static_cast<std::size_t>(item)][static_cast<std::size_t>(pick(walk))];
    }
  }
  return out;
}

}  // namespace tarec
