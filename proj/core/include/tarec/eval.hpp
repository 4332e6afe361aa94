#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tarec/corpus.hpp"
#include "tarec/generate.hpp"
#include "tarec/nets.hpp"
#include "tarec/schedule.hpp"

namespace tarec {

struct HitNdcg {
  double hr = 0.0;
  double ndcg = 0.0;
};

/// hr = 1 iff `target` is among the first k; ndcg = 1/log2(rank + 1) on a hit.
HitNdcg hr_ndcg_at_k(std::span<const ItemIndex> ranked, ItemIndex target, int k);

/// |union of lists| / V.
double coverage_at_k(const std::vector<std::vector<ItemIndex>>& lists, std::size_t V);

struct MetricReport {
  double hr_at_k = 0.0;
  double ndcg_at_k = 0.0;
  double coverage_at_k = 0.0;
  int k = 20;
  std::size_t n_users = 0;
  std::map<std::string, double> timings;
  std::map<std::string, double> probe_stats;
};

/// Full-corpus ranking metrics of `model` on `examples`.
MetricReport evaluate(Model& model, std::span<const SequenceExample> examples,
                      const NoiseSchedule& sched, const InferenceOptions& options,
                      std::vector<RankingResult>* rankings = nullptr);

/// Batched x0 predictor with explicit guidance and per-row steps.
using BatchDenoiser =
    std::function<Matrix(const Matrix& x_t, const Matrix& g, std::span<const double> t)>;

/// Per-row ||f(x_t, g, t) - f(x_{t-1}, g, t-1)|| with x_t, x_{t-1} built from
/// the same x and z.
std::vector<double> consistency_gaps(const BatchDenoiser& f, const Matrix& x, const Matrix& g,
                                     std::span<const int> t, const Matrix& z,
                                     const NoiseSchedule& sched);

/// Mean gap over `n_probes` random (example, t, z) draws.
double consistency_gap(Model& model, std::span<const SequenceExample> examples,
                       const NoiseSchedule& sched, int n_probes, Rng& rng);

struct DeviationReport {
  std::vector<double> deviation;      // per row ||one_step - multi_step||
  std::vector<double> chained_bound;  // per row sum of consecutive x0_hat distances
  double mean = 0.0;
};

/// One-step vs deterministic `steps_ref`-step generation from the same x_T rows.
DeviationReport one_step_deviation(const DenoiseFn& f, const NoiseSchedule& sched, int steps_ref,
                                   const Matrix& x_T);

struct TrendPoint {
  int steps = 0;
  double mean_deviation = 0.0;
};

/// Endpoint distance of deterministic `steps`-point uniform trajectories to a
/// reference with `reference_steps` points (4 * max(steps_set) when 0),
/// sorted by steps.
std::vector<TrendPoint> discretization_trend(const DenoiseFn& f, const NoiseSchedule& sched,
                                             std::vector<int> steps_set, const Matrix& x_T,
                                             int reference_steps = 0);

/// Rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

/// h(lambda, dr) = lambda * sigmoid(-lambda * dr), the gradient magnitude of
/// -log sigmoid(lambda * dr) w.r.t. dr.
double dpo_gradient_magnitude(double lambda, double delta_r);

enum class ProbeVerdict { NonDecreasing, OutsideHypothesis, Violated };
std::string to_string(ProbeVerdict v);

struct DpoProbeRow {
  double delta_r = 0.0;
  std::vector<double> lambdas;
  std::vector<double> h;
  ProbeVerdict verdict = ProbeVerdict::NonDecreasing;
};

/// Checks h is non-decreasing along ascending `lambdas`. Drops beyond `tol`
/// where lambda * dr > 1 are reported as OutsideHypothesis.
DpoProbeRow dpo_gradient_row(double delta_r, std::span<const double> lambdas, double tol = 1e-9);

/// Rows over `delta_r`, each with lambdas step, 2 step, ... up to 1/dr (or up
/// to `lambda_max` when positive).
std::vector<DpoProbeRow> dpo_gradient_probe(std::span<const double> delta_r, double lambda_step,
                                            double tol = 1e-9, double lambda_max = 0.0);

struct TimingMode {
  bool one_step = true;
  int steps = 1;
  std::string name() const;
};

struct TimingRow {
  TimingMode mode;
  double median_seconds = 0.0;
  long long denoiser_calls = 0;  // per run
  int repeats = 0;
  bool single_sample = false;
  double speedup = 1.0;     // this row's median / the one-step median
  double call_ratio = 1.0;  // calls of this row / calls of the one-step row
};

/// Times generation for every guidance row in `g` under each mode, after one
/// untimed warm-up run. `speedup` and `call_ratio` are relative to the first
/// one-step mode (1 when none is present).
std::vector<TimingRow> timing_harness(Model& model, const Matrix& g, const NoiseSchedule& sched,
                                      const std::vector<TimingMode>& modes, int repeats,
                                      std::uint64_t seed);

}  // namespace tarec
