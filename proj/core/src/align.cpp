#include "tarec/align.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "tarec/error.hpp"
#include "tarec/optim.hpp"

namespace tarec {

NegativeStrategy parse_strategy(const std::string& name) {
  if (name == "random_batch") return NegativeStrategy::RandomBatch;
  if (name == "popularity") return NegativeStrategy::Popularity;
  if (name == "hard_cosine") return NegativeStrategy::HardCosine;
  throw ConfigError("unknown negative strategy '" + name +
                    "' (expected random_batch, popularity or hard_cosine)");
}

std::string to_string(NegativeStrategy s) {
  switch (s) {
    case NegativeStrategy::RandomBatch: return "random_batch";
    case NegativeStrategy::Popularity: return "popularity";
    case NegativeStrategy::HardCosine: return "hard_cosine";
  }
  return "unknown";
}

namespace {

ItemIndex fallback_negative(ItemIndex target, std::size_t V, Rng& rng) {
  if (V < 2) throw DataError("no negative available: corpus has a single item");
  std::uniform_int_distribution<std::size_t> pick(0, V - 2);
  auto i = static_cast<ItemIndex>(pick(rng));
  return i >= target ? i + 1 : i;
}

}  // namespace

ItemIndex sample_negative(const SequenceExample& example, std::span<const ItemIndex> batch_targets,
                          const ItemCorpus& corpus, const Matrix& embeddings,
                          NegativeStrategy strategy, Rng& rng, int hard_candidates) {
  const std::size_t V = corpus.size();
  std::unordered_set<ItemIndex> excluded(example.history.begin(), example.history.end());
  excluded.insert(example.target);
  const auto allowed = [&](ItemIndex i) {
    return i >= 0 && static_cast<std::size_t>(i) < V && excluded.count(i) == 0;
  };

  switch (strategy) {
    case NegativeStrategy::RandomBatch: {
      std::vector<ItemIndex> cand;
      std::unordered_set<ItemIndex> seen;
      for (ItemIndex i : batch_targets) {
        if (allowed(i) && seen.insert(i).second) cand.push_back(i);
      }
      if (cand.empty()) break;
      std::uniform_int_distribution<std::size_t> pick(0, cand.size() - 1);
      return cand[pick(rng)];
    }
    case NegativeStrategy::Popularity: {
      std::vector<double> w(V, 0.0);
      double total = 0.0;
      for (std::size_t i = 0; i < V; ++i) {
        if (allowed(static_cast<ItemIndex>(i))) {
          w[i] = static_cast<double>(corpus.popularity(static_cast<ItemIndex>(i)));
          total += w[i];
        }
      }
      if (total <= 0.0) break;
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      return static_cast<ItemIndex>(pick(rng));
    }
    case NegativeStrategy::HardCosine: {
      if (embeddings.rows() < V) throw ShapeError("embedding table smaller than the corpus");
      if (hard_candidates < 1) throw ConfigError("hard_cosine needs at least one candidate");
      std::uniform_int_distribution<std::size_t> pick(0, V - 1);
      const auto pos = embeddings.row_span(static_cast<std::size_t>(example.target));
      ItemIndex best = -1;
      double best_cos = 0.0;
      for (int k = 0; k < hard_candidates; ++k) {
        const auto i = static_cast<ItemIndex>(pick(rng));
        if (!allowed(i)) continue;
        const double c = cosine(pos, embeddings.row_span(static_cast<std::size_t>(i)));
        if (best < 0 || c > best_cos || (c == best_cos && i < best)) {
          best = i;
          best_cos = c;
        }
      }
      if (best >= 0) return best;
      break;
    }
  }
  return fallback_negative(example.target, V, rng);
}

double adaptive_lambda(int t, double d, int T, double lambda_base) {
  if (T < 1 || t < 0 || t > T) throw ContractViolation("adaptive_lambda: t outside [0, T]");
  if (!(d >= -1.0 - 1e-9 && d <= 1.0 + 1e-9)) throw ContractViolation("adaptive_lambda: d outside [-1, 1]");
  d = std::clamp(d, -1.0, 1.0);
  return lambda_base * ((1.0 - static_cast<double>(t) / static_cast<double>(T)) + (1.0 - d));
}

void attach_embeddings(PreferenceBatch& batch, const Matrix& embeddings) {
  const std::size_t m = batch.pairs.size();
  batch.x_pos = Matrix(m, embeddings.cols());
  batch.x_neg = Matrix(m, embeddings.cols());
  for (std::size_t r = 0; r < m; ++r) {
    PreferencePair& p = batch.pairs[r];
    if (p.positive == p.negative) throw ContractViolation("preference pair with positive == negative");
    const auto a = embeddings.row_span(static_cast<std::size_t>(p.positive));
    const auto b = embeddings.row_span(static_cast<std::size_t>(p.negative));
    std::copy(a.begin(), a.end(), batch.x_pos.row_span(r).begin());
    std::copy(b.begin(), b.end(), batch.x_neg.row_span(r).begin());
    p.d = cosine(a, b);
  }
}

std::vector<double> adaptive_lambdas(const NoiseSchedule& sched, const PreferenceBatch& batch,
                                     double lambda_base) {
  std::vector<double> out(batch.pairs.size());
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = adaptive_lambda(batch.draws.t[r], batch.pairs[r].d, sched.steps(), lambda_base);
  }
  return out;
}

Var preference_loss(Tape& tape, const NoiseSchedule& sched, const PreferenceBatch& batch,
                    std::span<const double> lambdas, const TapeDenoiser& theta,
                    const RefDenoiser& ref) {
  const std::size_t m = batch.pairs.size();
  if (m == 0) throw ContractViolation("empty preference batch");
  if (lambdas.size() != m || batch.draws.t.size() != m || batch.g.rows() != m ||
      !batch.x_pos.same_shape(batch.x_neg) || batch.x_pos.rows() != m ||
      !batch.draws.z.same_shape(batch.x_pos)) {
    throw ShapeError("preference batch fields disagree in size");
  }
  const std::size_t d = batch.x_pos.cols();

  Matrix x(2 * m, d), g(2 * m, batch.g.cols());
  std::vector<int> t2(2 * m);
  Matrix z2(2 * m, d);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      x(r, c) = batch.x_pos(r, c);
      x(m + r, c) = batch.x_neg(r, c);
      z2(r, c) = z2(m + r, c) = batch.draws.z(r, c);
    }
    for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) = g(m + r, c) = batch.g(r, c);
    t2[r] = t2[m + r] = batch.draws.t[r];
  }
  const Matrix x_t = forward_diffuse(x, t2, z2, sched);
  const std::vector<double> tt(t2.begin(), t2.end());

  const Matrix ref_out = ref(x_t, g, tt);
  Matrix ref_err(2 * m, 1);
  for (std::size_t r = 0; r < 2 * m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double e = ref_out(r, c) - x(r, c);
      s += e * e;
    }
    ref_err(r, 0) = s;
  }
  Matrix ref_bracket(m, 1);
  for (std::size_t r = 0; r < m; ++r) ref_bracket(r, 0) = ref_err(m + r, 0) - ref_err(r, 0);

  Matrix select(m, 2 * m);
  for (std::size_t r = 0; r < m; ++r) {
    select(r, r) = 1.0;
    select(r, m + r) = -1.0;
  }

  Var xv = tape.input(x);
  Var out = theta(tape.input(x_t), tape.input(g), tt);
  Var theta_err = ad::row_sq_norm(ad::sub(out, xv));
  Var bracket = ad::add(ad::matmul(tape.input(std::move(select)), theta_err), tape.input(ref_bracket));
  const Matrix& bv = bracket.value();
  for (std::size_t r = 0; r < m; ++r) {
    if (!std::isfinite(bv(r, 0)) || !std::isfinite(lambdas[r])) {
      throw NumericError("non-finite preference term for pair " + std::to_string(r) + " (positive " +
                         std::to_string(batch.pairs[r].positive) + ", negative " +
                         std::to_string(batch.pairs[r].negative) + ")");
    }
  }
  return ad::mean(ad::softplus(ad::scale_rows(bracket, lambdas)));
}

Var loss_apa(Tape& tape, const NoiseSchedule& sched, const PreferenceBatch& batch,
             double lambda_base, const TapeDenoiser& theta, const RefDenoiser& ref) {
  if (!(lambda_base > 0.0)) throw ConfigError("lambda_base must be > 0");
  const std::vector<double> lambdas = adaptive_lambdas(sched, batch, lambda_base);
  return preference_loss(tape, sched, batch, lambdas, theta, ref);
}

Var loss_diffusion_dpo(Tape& tape, const NoiseSchedule& sched, const PreferenceBatch& batch,
                       double lambda_beta, const TapeDenoiser& theta, const RefDenoiser& ref) {
  if (!(lambda_beta >= 0.0)) throw ConfigError("lambda_beta must be >= 0");
  const std::vector<double> lambdas(batch.pairs.size(), lambda_beta);
  return preference_loss(tape, sched, batch, lambdas, theta, ref);
}

void AlignConfig::validate() const {
  if (!(lambda_base > 0.0) || !std::isfinite(lambda_base)) throw ConfigError("finetune.lambda_base must be > 0");
  if (epochs < 0) throw ConfigError("finetune.epochs must be >= 0");
  if (batch_size < 2) throw ConfigError("finetune.batch_size must be >= 2");
  if (!(learning_rate > 0.0)) throw ConfigError("finetune.learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam eps must be > 0");
  if (patience < 1) throw ConfigError("finetune.patience must be >= 1");
  if (eval_k < 1) throw ConfigError("eval k must be >= 1");
}

FinetuneResult run_finetuning(const DatasetSplit& split, const ItemCorpus& corpus, Model pretrained,
                              const NoiseSchedule& sched, const AlignConfig& config,
                              const std::function<void(const FinetuneEpoch&)>& on_epoch) {
  using Clock = std::chrono::steady_clock;
  config.validate();
  if (static_cast<std::size_t>(pretrained.config.num_items) != corpus.size()) {
    throw ConfigError("model has " + std::to_string(pretrained.config.num_items) +
                      " items, corpus has " + std::to_string(corpus.size()));
  }
  FinetuneResult result;
  Model& model = pretrained;
  if (config.epochs == 0) {
    result.model = std::move(model);
    return result;
  }
  if (split.train.empty()) throw DataError("empty training split");

  Denoiser reference = model.denoiser;
  const RefDenoiser ref = [&reference](const Matrix& x, const Matrix& g, std::span<const double> t) {
    return reference(x, g, t);
  };
  const Matrix& table = model.encoder.item_embeddings().value;

  std::vector<std::vector<ItemIndex>> all_histories;
  all_histories.reserve(split.train.size());
  for (const auto& ex : split.train) all_histories.push_back(ex.history);
  const Matrix guidance = model.encoder.encode(all_histories);

  Rng shuffle_rng = make_rng(config.seed, "finetune-shuffle");
  Rng noise_rng = make_rng(config.seed, "finetune-noise");
  Rng neg_rng = make_rng(config.seed, "negatives");
  Adam adam(model.denoiser.parameters(),
            AdamOptions{config.learning_rate, config.beta1, config.beta2, config.adam_eps});

  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const auto dim = static_cast<std::size_t>(model.config.dim);

  double best_hr = -1.0;
  int since_best = 0;
  Denoiser best = model.denoiser;
  const auto start = Clock::now();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum_loss = 0.0, sum_lambda = 0.0;
    std::size_t pairs_seen = 0;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += bs) {
      const std::size_t n = std::min(bs, order.size() - b0);
      std::vector<ItemIndex> targets(n);
      for (std::size_t i = 0; i < n; ++i) targets[i] = split.train[order[b0 + i]].target;

      PreferenceBatch batch;
      batch.g = Matrix(n, guidance.cols());
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t e = order[b0 + i];
        const SequenceExample& ex = split.train[e];
        const ItemIndex neg = sample_negative(ex, targets, corpus, table, config.strategy, neg_rng);
        batch.pairs.push_back({ex.target, neg, 0.0});
        const auto src = guidance.row_span(e);
        std::copy(src.begin(), src.end(), batch.g.row_span(i).begin());
      }
      attach_embeddings(batch, table);
      batch.draws = draw_noise(n, dim, sched, noise_rng);

      const std::vector<double> lambdas =
          config.adaptive ? adaptive_lambdas(sched, batch, config.lambda_base)
                          : std::vector<double>(n, config.lambda_base);
      Tape tape;
      Var loss = preference_loss(tape, sched, batch, lambdas,
                                 tape_denoiser(tape, model.denoiser, Binding::Trainable), ref);
      const double value = loss.item();
      if (!std::isfinite(value)) throw DivergenceError(epoch, batches + 1, "non-finite alignment loss");
      adam.zero_grad();
      tape.backward(loss);
      adam.step();

      sum_loss += value;
      sum_lambda += std::accumulate(lambdas.begin(), lambdas.end(), 0.0);
      pairs_seen += n;
      ++batches;
    }

    FinetuneEpoch row;
    row.epoch = epoch;
    row.loss_apa = sum_loss / batches;
    row.mean_lambda_beta = sum_lambda / static_cast<double>(pairs_seen);
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
      best = model.denoiser;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.denoiser = std::move(best);
  result.model = std::move(model);
  return result;
}

}  // namespace tarec
