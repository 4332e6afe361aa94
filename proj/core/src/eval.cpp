#include "tarec/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "tarec/error.hpp"

namespace tarec {

HitNdcg hr_ndcg_at_k(std::span<const ItemIndex> ranked, ItemIndex target, int k) {
  if (k < 1 || ranked.size() < static_cast<std::size_t>(k)) {
    throw ContractViolation("ranked list shorter than k=" + std::to_string(k));
  }
  std::unordered_set<ItemIndex> seen;
  for (ItemIndex i : ranked) {
    if (!seen.insert(i).second) {
      throw ContractViolation("duplicate item " + std::to_string(i) + " in ranked list");
    }
  }
  for (int r = 0; r < k; ++r) {
    if (ranked[static_cast<std::size_t>(r)] == target) {
      return {1.0, 1.0 / std::log2(static_cast<double>(r) + 2.0)};
    }
  }
  return {};
}

double coverage_at_k(const std::vector<std::vector<ItemIndex>>& lists, std::size_t V) {
  if (V == 0) throw ContractViolation("coverage needs V > 0");
  std::unordered_set<ItemIndex> seen;
  for (const auto& l : lists) seen.insert(l.begin(), l.end());
  return static_cast<double>(seen.size()) / static_cast<double>(V);
}

MetricReport evaluate(Model& model, std::span<const SequenceExample> examples,
                      const NoiseSchedule& sched, const InferenceOptions& options,
                      std::vector<RankingResult>* rankings) {
  using Clock = std::chrono::steady_clock;
  MetricReport report;
  report.k = options.K;
  report.n_users = examples.size();
  if (examples.empty()) return report;

  const auto t0 = Clock::now();
  std::vector<RankingResult> results = recommend(model, examples, sched, options);
  report.timings["total"] = std::chrono::duration<double>(Clock::now() - t0).count();

  double hr = 0.0, ndcg = 0.0, gen = 0.0;
  std::vector<std::vector<ItemIndex>> lists;
  lists.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    std::vector<ItemIndex> ranked;
    ranked.reserve(results[i].top_k.size());
    for (const auto& [item, score] : results[i].top_k) ranked.push_back(item);
    const HitNdcg m = hr_ndcg_at_k(ranked, examples[i].target, options.K);
    hr += m.hr;
    ndcg += m.ndcg;
    gen += results[i].elapsed;
    lists.push_back(std::move(ranked));
  }
  const double n = static_cast<double>(examples.size());
  report.hr_at_k = hr / n;
  report.ndcg_at_k = ndcg / n;
  report.coverage_at_k = coverage_at_k(lists, static_cast<std::size_t>(model.config.num_items));
  report.timings["generation"] = gen;
  if (rankings) *rankings = std::move(results);
  return report;
}

namespace {

double row_distance(const Matrix& a, const Matrix& b, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    const double d = a(r, c) - b(r, c);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

std::vector<double> consistency_gaps(const BatchDenoiser& f, const Matrix& x, const Matrix& g,
                                     std::span<const int> t, const Matrix& z,
                                     const NoiseSchedule& sched) {
  if (t.size() != x.rows()) throw ShapeError("consistency_gaps: one step per row required");
  std::vector<int> prev(t.begin(), t.end());
  for (int& p : prev) {
    if (p < 1) throw ContractViolation("consistency_gaps: steps must be >= 1");
    --p;
  }
  const Matrix x_t = forward_diffuse(x, t, z, sched);
  const Matrix x_prev = forward_diffuse(x, prev, z, sched);
  const std::vector<double> tt(t.begin(), t.end());
  const std::vector<double> tp(prev.begin(), prev.end());
  const Matrix a = f(x_t, g, tt);
  const Matrix b = f(x_prev, g, tp);
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = row_distance(a, b, r);
  return out;
}

double consistency_gap(Model& model, std::span<const SequenceExample> examples,
                       const NoiseSchedule& sched, int n_probes, Rng& rng) {
  if (n_probes < 1) throw ContractViolation("consistency_gap needs n_probes >= 1");
  if (examples.empty()) throw ContractViolation("consistency_gap needs examples");
  std::uniform_int_distribution<std::size_t> pick(0, examples.size() - 1);
  std::uniform_int_distribution<int> step(1, sched.steps());
  const auto n = static_cast<std::size_t>(n_probes);
  std::vector<std::vector<ItemIndex>> histories;
  std::vector<int> targets, t(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SequenceExample& ex = examples[pick(rng)];
    histories.push_back(ex.history);
    targets.push_back(ex.target);
    t[i] = step(rng);
  }
  const Matrix z = gaussian(n, static_cast<std::size_t>(model.config.dim), rng);
  const Matrix& table = model.encoder.item_embeddings().value;
  Matrix x(n, table.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = table.row_span(static_cast<std::size_t>(targets[i]));
    std::copy(src.begin(), src.end(), x.row_span(i).begin());
  }
  const Matrix g = model.encoder.encode(histories);
  const BatchDenoiser f = [&model](const Matrix& xt, const Matrix& gg, std::span<const double> tt) {
    return model.denoiser(xt, gg, tt);
  };
  const std::vector<double> gaps = consistency_gaps(f, x, g, t, z, sched);
  return std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(n);
}

DeviationReport one_step_deviation(const DenoiseFn& f, const NoiseSchedule& sched, int steps_ref,
                                   const Matrix& x_T) {
  if (steps_ref < 1) throw ContractViolation("one_step_deviation needs steps_ref >= 1");
  const Matrix one = generate_one_step(f, sched, x_T);
  std::vector<Matrix> preds;
  const Matrix multi = run_reverse(f, strided_grid(sched, steps_ref), x_T, nullptr, &preds);
  DeviationReport rep;
  for (std::size_t r = 0; r < x_T.rows(); ++r) {
    rep.deviation.push_back(row_distance(one, multi, r));
    double chain = 0.0;
    for (std::size_t k = 0; k + 1 < preds.size(); ++k) chain += row_distance(preds[k], preds[k + 1], r);
    rep.chained_bound.push_back(chain);
  }
  if (!rep.deviation.empty()) {
    rep.mean = std::accumulate(rep.deviation.begin(), rep.deviation.end(), 0.0) /
               static_cast<double>(rep.deviation.size());
  }
  return rep;
}

std::vector<TrendPoint> discretization_trend(const DenoiseFn& f, const NoiseSchedule& sched,
                                             std::vector<int> steps_set, const Matrix& x_T,
                                             int reference_steps) {
  if (steps_set.empty()) throw ContractViolation("discretization_trend needs at least one step count");
  std::sort(steps_set.begin(), steps_set.end());
  steps_set.erase(std::unique(steps_set.begin(), steps_set.end()), steps_set.end());
  if (steps_set.front() < 1) throw ContractViolation("step counts must be >= 1");
  if (reference_steps < 0) throw ContractViolation("reference step count must be >= 0");
  const int n_ref = reference_steps > 0 ? reference_steps : 4 * steps_set.back();
  const Matrix ref = run_reverse(f, uniform_grid(sched, n_ref), x_T, nullptr);
  std::vector<TrendPoint> out;
  for (int n : steps_set) {
    const Matrix end = run_reverse(f, uniform_grid(sched, n), x_T, nullptr);
    double s = 0.0;
    for (std::size_t r = 0; r < x_T.rows(); ++r) s += row_distance(end, ref, r);
    out.push_back({n, x_T.rows() ? s / static_cast<double>(x_T.rows()) : 0.0});
  }
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractViolation("spearman needs two equal-length samples of size >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double dpo_gradient_magnitude(double lambda, double delta_r) {
  const double a = lambda * delta_r;
  const double sig = a >= 0 ? std::exp(-a) / (1.0 + std::exp(-a)) : 1.0 / (1.0 + std::exp(a));
  return lambda * sig;
}

std::string to_string(ProbeVerdict v) {
  switch (v) {
    case ProbeVerdict::NonDecreasing: return "non-decreasing";
    case ProbeVerdict::OutsideHypothesis: return "outside-hypothesis";
    case ProbeVerdict::Violated: return "violated";
  }
  return "unknown";
}

DpoProbeRow dpo_gradient_row(double delta_r, std::span<const double> lambdas, double tol) {
  if (!(delta_r > 0.0 && delta_r <= 1.0)) {
    throw ConfigError("delta_r must lie in (0, 1], got " + std::to_string(delta_r));
  }
  if (lambdas.empty()) throw ConfigError("empty lambda grid");
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > 0.0) || !std::isfinite(lambdas[i])) throw ConfigError("lambda grid must be positive and finite");
    if (i && !(lambdas[i] > lambdas[i - 1])) throw ConfigError("lambda grid must be strictly ascending");
  }
  DpoProbeRow row;
  row.delta_r = delta_r;
  row.lambdas.assign(lambdas.begin(), lambdas.end());
  for (double l : lambdas) row.h.push_back(dpo_gradient_magnitude(l, delta_r));
  const auto inside = [&](double l) { return l * delta_r <= 1.0 + 1e-12; };
  for (std::size_t i = 1; i < row.h.size(); ++i) {
    if (row.h[i] < row.h[i - 1] - tol) {
      if (inside(row.lambdas[i]) && inside(row.lambdas[i - 1])) {
        row.verdict = ProbeVerdict::Violated;
      } else if (row.verdict == ProbeVerdict::NonDecreasing) {
        row.verdict = ProbeVerdict::OutsideHypothesis;
      }
    }
  }
  return row;
}

std::vector<DpoProbeRow> dpo_gradient_probe(std::span<const double> delta_r, double lambda_step,
                                            double tol, double lambda_max) {
  if (!(lambda_step > 0.0)) throw ConfigError("lambda step must be positive");
  std::vector<DpoProbeRow> rows;
  for (double dr : delta_r) {
    if (!(dr > 0.0 && dr <= 1.0)) throw ConfigError("delta_r must lie in (0, 1], got " + std::to_string(dr));
    const double top = lambda_max > 0.0 ? lambda_max : 1.0 / dr;
    std::vector<double> lambdas;
    for (int k = 1;; ++k) {
      const double l = lambda_step * k;
      if (l > top * (1.0 + 1e-12)) break;
      lambdas.push_back(l);
    }
    if (lambdas.empty()) throw ConfigError("lambda step exceeds the admissible range");
    rows.push_back(dpo_gradient_row(dr, lambdas, tol));
  }
  return rows;
}

std::string TimingMode::name() const {
  return one_step ? "one_step" : "multi_step(" + std::to_string(steps) + ")";
}

std::vector<TimingRow> timing_harness(Model& model, const Matrix& g, const NoiseSchedule& sched,
                                      const std::vector<TimingMode>& modes, int repeats,
                                      std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  if (repeats < 1) throw ContractViolation("timing_harness needs repeats >= 1");
  std::vector<TimingRow> rows;
  for (const TimingMode& mode : modes) {
    CountingDenoiser counter(bind_denoiser(model, g));
    const DenoiseFn f = counter.as_fn();
    const auto run = [&](Rng& rng) {
      return mode.one_step ? generate_one_step(f, sched, g.rows(), model.config.dim, rng)
                           : generate_multi_step(f, sched, mode.steps, g.rows(), model.config.dim, rng);
    };
    Rng rng = make_rng(seed, "timing");
    run(rng);  // warm-up
    const long long warm_calls = counter.calls();
    std::vector<double> secs;
    for (int r = 0; r < repeats; ++r) {
      Rng rr = make_rng(seed, "timing");
      const auto t0 = Clock::now();
      const Matrix out = run(rr);
      secs.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
      if (out.empty()) throw NumericError("empty generation");
    }
    std::sort(secs.begin(), secs.end());
    TimingRow row;
    row.mode = mode;
    row.median_seconds = secs.size() % 2 ? secs[secs.size() / 2]
                                         : 0.5 * (secs[secs.size() / 2 - 1] + secs[secs.size() / 2]);
    row.denoiser_calls = warm_calls;
    row.repeats = repeats;
    row.single_sample = repeats == 1;
    rows.push_back(row);
  }
  const auto base = std::find_if(rows.begin(), rows.end(), [](const TimingRow& r) { return r.mode.one_step; });
  if (base != rows.end()) {
    const double s = base->median_seconds;
    const double c = static_cast<double>(base->denoiser_calls);
    for (auto& r : rows) {
      r.speedup = s > 0.0 ? r.median_seconds / s : 0.0;
      r.call_ratio = static_cast<double>(r.denoiser_calls) / c;
    }
  }
  return rows;
}

}  // namespace tarec
