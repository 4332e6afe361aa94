#pragma once

#include <functional>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tarec/corpus.hpp"
#include "tarec/nets.hpp"
#include "tarec/rng.hpp"
#include "tarec/schedule.hpp"

namespace tarec {

/// Batched x0 predictor at a (possibly fractional) step; guidance is bound in.
using DenoiseFn = std::function<Matrix(const Matrix& x_t, double t)>;

/// Wraps a DenoiseFn and counts invocations.
class CountingDenoiser {
 public:
  explicit CountingDenoiser(DenoiseFn inner) : inner_(std::move(inner)) {}
  Matrix operator()(const Matrix& x_t, double t) {
    ++calls_;
    return inner_(x_t, t);
  }
  long long calls() const noexcept { return calls_; }
  DenoiseFn as_fn() {
    return [this](const Matrix& x, double t) { return (*this)(x, t); };
  }

 private:
  DenoiseFn inner_;
  long long calls_ = 0;
};

/// Descending noise levels visited by a reverse trajectory. After the last
/// entry the trajectory jumps to alpha_bar = 1 (clean).
struct TimeGrid {
  std::vector<double> t;
  std::vector<double> alpha_bar;
};

/// `steps` integer timesteps spread evenly over [1, T], always including T and 1.
TimeGrid strided_grid(const NoiseSchedule& sched, int steps);

/// `steps` equally spaced fractional timesteps k*T/steps, k = steps..1.
/// Levels between integer steps are log-linearly interpolated.
TimeGrid uniform_grid(const NoiseSchedule& sched, int steps);

/// Runs the reverse process from x_T. `noise == nullptr` forces every z to 0
/// (deterministic mode); otherwise z is drawn for all but the final jump.
/// `predictions`, when given, receives every x0_hat in visiting order.
Matrix run_reverse(const DenoiseFn& f, const TimeGrid& grid, Matrix x_T, Rng* noise,
                   std::vector<Matrix>* predictions = nullptr);

/// x_0 = f(x_T, T).
Matrix generate_one_step(const DenoiseFn& f, const NoiseSchedule& sched, const Matrix& x_T);
Matrix generate_one_step(const DenoiseFn& f, const NoiseSchedule& sched, std::size_t rows,
                         int dim, Rng& rng);

/// Iterated reverse steps over the strided sub-schedule of `steps` <= T points.
Matrix generate_multi_step(const DenoiseFn& f, const NoiseSchedule& sched, int steps,
                           const Matrix& x_T, Rng* noise);
Matrix generate_multi_step(const DenoiseFn& f, const NoiseSchedule& sched, int steps,
                           std::size_t rows, int dim, Rng& rng, bool deterministic = false);

struct RankingResult {
  std::vector<double> generated;
  std::vector<std::pair<ItemIndex, double>> top_k;
  double elapsed = 0.0;  // generation seconds attributed to this row
};

/// Top-K by dot product over the first `num_items` rows of `embeddings`
/// (padding excluded). Ties go to the lower index.
RankingResult rank(std::span<const double> x0, const Matrix& embeddings, std::size_t num_items,
                   int K, const std::unordered_set<ItemIndex>* exclude = nullptr);

struct InferenceOptions {
  int steps = 1;  // 1 = one-step generation
  int K = 20;
  double w = 0.0;
  std::uint64_t seed = 0;
  bool deterministic = false;
  bool exclude_history = false;
  std::size_t chunk = 512;
};

/// Denoiser of `model` with guidance rows `g` bound, classifier-free scale w.
DenoiseFn bind_denoiser(Model& model, const Matrix& g, double w = 0.0);

/// Encodes, generates and ranks every example. Per-row `elapsed` is the
/// chunk's generation time divided evenly across its rows.
std::vector<RankingResult> recommend(Model& model, std::span<const SequenceExample> examples,
                                     const NoiseSchedule& sched, const InferenceOptions& options);

}  // namespace tarec
