#include "tarec/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "tarec/error.hpp"
#include "tarec/eval.hpp"
#include "tarec/optim.hpp"

namespace tarec {

NoiseDraws draw_noise(std::size_t rows, std::size_t dim, const NoiseSchedule& sched, Rng& rng) {
  NoiseDraws d;
  std::uniform_int_distribution<int> step(1, sched.steps());
  d.t.resize(rows);
  for (int& t : d.t) t = step(rng);
  d.z = gaussian(rows, dim, rng);
  return d;
}

Var diffuse(Var x, const NoiseDraws& draws, const NoiseSchedule& sched, int offset) {
  if (x.rows() == 0) throw ContractViolation("empty batch");
  if (draws.t.size() != x.rows() || !draws.z.same_shape(x.value())) {
    throw ShapeError("noise draws do not match the batch shape");
  }
  std::vector<double> a(x.rows()), b(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const int t = draws.t[r] + offset;
    if (t < 0 || t > sched.steps()) throw ContractViolation("step outside [0, T]");
    a[r] = std::sqrt(sched.alpha_bar(t));
    b[r] = std::sqrt(1.0 - sched.alpha_bar(t));
  }
  Tape& tape = *x.tape();
  return ad::add(ad::scale_rows(x, a), ad::scale_rows(tape.constant(draws.z), b));
}

namespace {

std::vector<double> steps_of(const NoiseDraws& d, int offset) {
  std::vector<double> t(d.t.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(d.t[i] + offset);
  return t;
}

Var mean_sq_dist(Var a, Var b) { return ad::mean(ad::row_sq_norm(ad::sub(a, b))); }

Var predict_prev(Var x, Var g, const NoiseDraws& draws, const NoiseSchedule& sched,
                 const TapeDenoiser& f, bool stop_prev_grad) {
  Var out = f(diffuse(x, draws, sched, -1), g, steps_of(draws, -1));
  return stop_prev_grad ? ad::detach(out) : out;
}

}  // namespace

Var loss_diff(Var x, Var g, const NoiseDraws& draws, const NoiseSchedule& sched,
              const TapeDenoiser& f) {
  return mean_sq_dist(f(diffuse(x, draws, sched), g, steps_of(draws, 0)), x);
}

Var loss_tcr(Var x, Var g, const NoiseDraws& draws, const NoiseSchedule& sched,
             const TapeDenoiser& f, bool stop_prev_grad) {
  Var cur = f(diffuse(x, draws, sched), g, steps_of(draws, 0));
  return mean_sq_dist(cur, predict_prev(x, g, draws, sched, f, stop_prev_grad));
}

PretrainLoss loss_pre(Var x, Var g, const NoiseDraws& draws, const NoiseSchedule& sched,
                      const TapeDenoiser& f, double lambda_c, bool stop_prev_grad) {
  if (!(lambda_c >= 0.0)) throw ConfigError("lambda_c must be >= 0");
  Var cur = f(diffuse(x, draws, sched), g, steps_of(draws, 0));
  PretrainLoss l;
  l.diff = mean_sq_dist(cur, x);
  l.tcr = mean_sq_dist(cur, predict_prev(x, g, draws, sched, f, stop_prev_grad));
  l.total = ad::add(l.diff, ad::scale(l.tcr, lambda_c));
  return l;
}

void PretrainConfig::validate() const {
  if (!(lambda_c >= 0.0) || !std::isfinite(lambda_c)) throw ConfigError("pretrain.lambda_c must be >= 0");
  if (epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam eps must be > 0");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  if (patience < 1) throw ConfigError("pretrain.patience must be >= 1");
  if (eval_k < 1) throw ConfigError("eval k must be >= 1");
}

TapeDenoiser tape_denoiser(Tape& tape, Denoiser& denoiser, Binding binding) {
  return [&tape, &denoiser, binding](Var x_t, Var g, std::span<const double> t) {
    return denoiser.forward(tape, x_t, g, t, binding);
  };
}

std::vector<Matrix> snapshot(Model& model) {
  std::vector<Matrix> out;
  for (Parameter* p : model.parameters()) out.push_back(p->value);
  return out;
}

void restore(Model& model, const std::vector<Matrix>& values) {
  auto params = model.parameters();
  if (params.size() != values.size()) throw ShapeError("snapshot does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

PretrainResult run_pretraining(const DatasetSplit& split, const ItemCorpus& corpus, Model model,
                               const NoiseSchedule& sched, const PretrainConfig& config,
                               const std::function<void(const PretrainEpoch&)>& on_epoch) {
  using Clock = std::chrono::steady_clock;
  config.validate();
  if (static_cast<std::size_t>(model.config.num_items) != corpus.size()) {
    throw ConfigError("model has " + std::to_string(model.config.num_items) + " items, corpus has " +
                      std::to_string(corpus.size()));
  }
  PretrainResult result;
  if (config.epochs == 0) {
    result.model = std::move(model);
    return result;
  }
  if (split.train.empty()) throw DataError("empty training split");

  Rng shuffle_rng = make_rng(config.seed, "shuffle");
  Rng noise_rng = make_rng(config.seed, "noise");
  Rng drop_rng = make_rng(config.seed, "dropout");
  Adam adam(model.parameters(), AdamOptions{config.learning_rate, config.beta1, config.beta2, config.adam_eps});

  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto dim = static_cast<std::size_t>(model.config.dim);
  const auto bs = static_cast<std::size_t>(config.batch_size);
  std::bernoulli_distribution coin(config.rho);

  double best_hr = -1.0;
  int since_best = 0;
  std::vector<Matrix> best = snapshot(model);
  const auto start = Clock::now();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum_diff = 0.0, sum_tcr = 0.0, sum_pre = 0.0;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += bs) {
      const std::size_t n = std::min(bs, order.size() - b0);
      std::vector<std::vector<ItemIndex>> histories(n);
      std::vector<int> targets(n);
      std::vector<bool> drop(n);
      for (std::size_t i = 0; i < n; ++i) {
        const SequenceExample& ex = split.train[order[b0 + i]];
        histories[i] = ex.history;
        targets[i] = ex.target;
        drop[i] = coin(drop_rng);
      }
      const NoiseDraws draws = draw_noise(n, dim, sched, noise_rng);

      try {
        Tape tape;
        Var table = tape.param(model.encoder.item_embeddings());
        Var x = ad::gather_rows(table, targets);
        if (!config.target_grad) x = ad::detach(x);
        Var g = model.encoder.forward(tape, histories, drop, Binding::Trainable);
        const TapeDenoiser f = tape_denoiser(tape, model.denoiser, Binding::Trainable);
        PretrainLoss loss;
        if (config.lambda_c > 0.0) {
          loss = loss_pre(x, g, draws, sched, f, config.lambda_c, config.stop_prev_grad);
        } else {
          loss.diff = loss_diff(x, g, draws, sched, f);
          loss.total = loss.diff;
        }
        const double total = loss.total.item();
        if (!std::isfinite(total)) {
          throw DivergenceError(epoch, batches + 1, "non-finite pretraining loss");
        }
        double tcr = 0.0;
        if (config.lambda_c > 0.0) {
          tcr = loss.tcr.item();
        } else {
          Tape probe(false);
          Var px = probe.constant(x.value());
          Var pg = probe.constant(g.value());
          tcr = loss_tcr(px, pg, draws, sched, tape_denoiser(probe, model.denoiser, Binding::Frozen)).item();
        }
        adam.zero_grad();
        tape.backward(loss.total);
        adam.step();
        sum_diff += loss.diff.item();
        sum_tcr += tcr;
        sum_pre += total;
      } catch (const NumericError& e) {
        throw DivergenceError(epoch, batches + 1, e.what());
      }
      ++batches;
    }

    PretrainEpoch row;
    row.epoch = epoch;
    row.loss_diff = sum_diff / batches;
    row.loss_tcr = sum_tcr / batches;
    row.loss_pre = sum_pre / batches;
    if (!split.valid.empty()) {
      InferenceOptions opt;
      opt.K = config.eval_k;
      opt.seed = config.seed;
      const MetricReport rep = evaluate(model, split.valid, sched, opt);
      row.valid_hr = rep.hr_at_k;
      row.valid_ndcg = rep.ndcg_at_k;
    }
    row.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);

    if (split.valid.empty() || row.valid_hr > best_hr) {
      best_hr = row.valid_hr;
      best = snapshot(model);
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  restore(model, best);
  result.model = std::move(model);
  return result;
}

}  // namespace tarec
