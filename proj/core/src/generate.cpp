#include "tarec/generate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "tarec/error.hpp"

namespace tarec {

TimeGrid strided_grid(const NoiseSchedule& sched, int steps) {
  const int T = sched.steps();
  if (steps < 1 || steps > T) {
    throw ContractViolation("steps must lie in [1, T=" + std::to_string(T) + "], got " +
                            std::to_string(steps));
  }
  TimeGrid grid;
  for (int k = steps - 1; k >= 0; --k) {
    const int t = steps == 1 ? T
                             : 1 + static_cast<int>(std::lround(static_cast<double>(T - 1) * k /
                                                                static_cast<double>(steps - 1)));
    grid.t.push_back(static_cast<double>(t));
    grid.alpha_bar.push_back(sched.alpha_bar(t));
  }
  return grid;
}

TimeGrid uniform_grid(const NoiseSchedule& sched, int steps) {
  if (steps < 1) throw ContractViolation("uniform_grid needs steps >= 1");
  const double T = sched.steps();
  TimeGrid grid;
  for (int k = steps; k >= 1; --k) {
    const double t = k == steps ? T : T * static_cast<double>(k) / static_cast<double>(steps);
    grid.t.push_back(t);
    grid.alpha_bar.push_back(sched.alpha_bar_at(t));
  }
  return grid;
}

Matrix run_reverse(const DenoiseFn& f, const TimeGrid& grid, Matrix x_T, Rng* noise,
                   std::vector<Matrix>* predictions) {
  if (grid.t.empty() || grid.t.size() != grid.alpha_bar.size()) {
    throw ContractViolation("run_reverse: empty or inconsistent grid");
  }
  Matrix x = std::move(x_T);
  for (std::size_t k = 0; k < grid.t.size(); ++k) {
    Matrix x0_hat = f(x, grid.t[k]);
    if (!x0_hat.same_shape(x)) throw ShapeError("denoiser output shape differs from x_t");
    const bool last = k + 1 == grid.t.size();
    const double ab_prev = last ? 1.0 : grid.alpha_bar[k + 1];
    const ReverseCoefficients coef = reverse_coefficients(grid.alpha_bar[k], ab_prev);
    if (last || noise == nullptr) {
      x = reverse_step(x0_hat, x, coef, nullptr);
    } else {
      const Matrix z = gaussian(x.rows(), x.cols(), *noise);
      x = reverse_step(x0_hat, x, coef, &z);
    }
    if (predictions) predictions->push_back(std::move(x0_hat));
  }
  return x;
}

Matrix generate_one_step(const DenoiseFn& f, const NoiseSchedule& sched, const Matrix& x_T) {
  return f(x_T, static_cast<double>(sched.steps()));
}

Matrix generate_one_step(const DenoiseFn& f, const NoiseSchedule& sched, std::size_t rows, int dim,
                         Rng& rng) {
  return generate_one_step(f, sched, gaussian(rows, static_cast<std::size_t>(dim), rng));
}

Matrix generate_multi_step(const DenoiseFn& f, const NoiseSchedule& sched, int steps,
                           const Matrix& x_T, Rng* noise) {
  return run_reverse(f, strided_grid(sched, steps), x_T, noise);
}

Matrix generate_multi_step(const DenoiseFn& f, const NoiseSchedule& sched, int steps,
                           std::size_t rows, int dim, Rng& rng, bool deterministic) {
  Matrix x_T = gaussian(rows, static_cast<std::size_t>(dim), rng);
  return generate_multi_step(f, sched, steps, x_T, deterministic ? nullptr : &rng);
}

RankingResult rank(std::span<const double> x0, const Matrix& embeddings, std::size_t num_items,
                   int K, const std::unordered_set<ItemIndex>* exclude) {
  if (num_items > embeddings.rows()) throw ShapeError("rank: num_items exceeds embedding rows");
  if (x0.size() != embeddings.cols()) throw ShapeError("rank: dimension mismatch");
  std::vector<ItemIndex> candidates;
  candidates.reserve(num_items);
  for (std::size_t i = 0; i < num_items; ++i) {
    const auto idx = static_cast<ItemIndex>(i);
    if (exclude == nullptr || exclude->count(idx) == 0) candidates.push_back(idx);
  }
  if (K < 0 || static_cast<std::size_t>(K) > candidates.size()) {
    throw ContractViolation("rank: K=" + std::to_string(K) + " exceeds " +
                            std::to_string(candidates.size()) + " candidate items");
  }
  std::vector<double> score(num_items, 0.0);
  for (ItemIndex i : candidates) {
    score[static_cast<std::size_t>(i)] = dot(x0, embeddings.row_span(static_cast<std::size_t>(i)));
  }
  const auto better = [&](ItemIndex a, ItemIndex b) {
    const double sa = score[static_cast<std::size_t>(a)], sb = score[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + K, candidates.end(), better);
  RankingResult r;
  r.generated.assign(x0.begin(), x0.end());
  for (int k = 0; k < K; ++k) {
    const ItemIndex i = candidates[static_cast<std::size_t>(k)];
    r.top_k.emplace_back(i, score[static_cast<std::size_t>(i)]);
  }
  return r;
}

DenoiseFn bind_denoiser(Model& model, const Matrix& g, double w) {
  return [&model, &g, w](const Matrix& x_t, double t) {
    if (w == 0.0) return model.denoiser(x_t, g, t);
    return guided_denoise(x_t, g, t, model.encoder, model.denoiser, w);
  };
}

std::vector<RankingResult> recommend(Model& model, std::span<const SequenceExample> examples,
                                     const NoiseSchedule& sched, const InferenceOptions& options) {
  using Clock = std::chrono::steady_clock;
  std::vector<RankingResult> out;
  out.reserve(examples.size());
  Rng rng = make_rng(options.seed, "inference");
  const auto V = static_cast<std::size_t>(model.config.num_items);
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const std::size_t n = std::min(chunk, examples.size() - start);
    std::vector<std::vector<ItemIndex>> histories;
    histories.reserve(n);
    for (std::size_t i = 0; i < n; ++i) histories.push_back(examples[start + i].history);
    const Matrix g = model.encoder.encode(histories);
    const DenoiseFn f = bind_denoiser(model, g, options.w);

    const auto t0 = Clock::now();
    Matrix x_T = gaussian(n, static_cast<std::size_t>(model.config.dim), rng);
    const Matrix x0 = options.steps == 1
                          ? generate_one_step(f, sched, x_T)
                          : generate_multi_step(f, sched, options.steps, x_T,
                                                options.deterministic ? nullptr : &rng);
    const double per_row =
        std::chrono::duration<double>(Clock::now() - t0).count() / static_cast<double>(n);

    const Matrix& table = model.encoder.item_embeddings().value;
    for (std::size_t i = 0; i < n; ++i) {
      std::unordered_set<ItemIndex> excl;
      if (options.exclude_history) {
        for (ItemIndex it : histories[i]) {
          if (it != model.config.num_items) excl.insert(it);
        }
      }
      RankingResult r = rank(x0.row_span(i), table, V, options.K, options.exclude_history ? &excl : nullptr);
      r.elapsed = per_row;
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace tarec
