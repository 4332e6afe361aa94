#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "tarec/align.hpp"
#include "tarec/error.hpp"

using namespace tarec;
using tarec::testing::check_gradients;
using tarec::testing::tiny_dataset;
using tarec::testing::tiny_model;

namespace {

ItemCorpus corpus_with_counts(const std::vector<std::int64_t>& counts) {
  ItemCorpus c;
  for (std::size_t i = 0; i < counts.size(); ++i) c.add("i" + std::to_string(i), counts[i]);
  return c;
}

SequenceExample example(std::vector<ItemIndex> history, ItemIndex target) {
  SequenceExample e;
  e.history = std::move(history);
  e.target = target;
  return e;
}

PreferenceBatch random_batch(const Model& m, const NoiseSchedule& s, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix& table = m.encoder.item_embeddings().value;
  const auto V = static_cast<ItemIndex>(m.config.num_items);
  std::uniform_int_distribution<ItemIndex> pick(0, V - 1);
  PreferenceBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    const ItemIndex p = pick(rng);
    ItemIndex q = pick(rng);
    while (q == p) q = pick(rng);
    b.pairs.push_back({p, q, 0.0});
  }
  b.g = gaussian(n, static_cast<std::size_t>(m.config.dim), rng);
  attach_embeddings(b, table);
  b.draws = draw_noise(n, static_cast<std::size_t>(m.config.dim), s, rng);
  return b;
}

RefDenoiser ref_of(Denoiser& d) {
  return [&d](const Matrix& x, const Matrix& g, std::span<const double> t) { return d(x, g, t); };
}

}  // namespace

TEST(Negatives, RandomBatchForcedChoice) {
  auto corpus = corpus_with_counts({1, 1, 1, 1});
  const std::vector<ItemIndex> targets = {1, 3};
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(sample_negative(example({4, 4, 0}, 1), targets, corpus, Matrix(5, 2), NegativeStrategy::RandomBatch, rng), 3);
  }
}

TEST(Negatives, PopularityFrequencies) {
  // Items a, b, c with c the target: a has 3 counts, b has 1.
  auto corpus = corpus_with_counts({3, 1, 7});
  Rng rng(2);
  const std::vector<ItemIndex> none;
  int a = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const ItemIndex n = sample_negative(example({3, 3, 3}, 2), none, corpus, Matrix(4, 2), NegativeStrategy::Popularity, rng);
    ASSERT_NE(n, 2);
    a += n == 0;
  }
  EXPECT_NEAR(static_cast<double>(a) / draws, 0.75, 0.01);
}

TEST(Negatives, HardCosinePicksAlignedCandidate) {
  auto corpus = corpus_with_counts({1, 1, 1, 1});
  Matrix e(5, 2);
  e(0, 0) = 1;   // target direction
  e(1, 1) = 1;
  e(2, 0) = 5;   // same direction as the target
  e(3, 0) = -1;
  Rng rng(3);
  const std::vector<ItemIndex> none;
  EXPECT_EQ(sample_negative(example({4, 4, 4}, 0), none, corpus, e, NegativeStrategy::HardCosine, rng, 200), 2);
}

TEST(Negatives, ExclusionsAndFallback) {
  auto corpus = corpus_with_counts({2, 2, 2, 2, 2});
  Rng rng(4);
  Matrix e = gaussian(6, 3, rng);
  const std::vector<ItemIndex> targets = {0, 1, 2, 3, 4};
  for (auto strategy : {NegativeStrategy::RandomBatch, NegativeStrategy::Popularity, NegativeStrategy::HardCosine}) {
    for (int i = 0; i < 200; ++i) {
      const ItemIndex n = sample_negative(example({1, 2, 5}, 0), targets, corpus, e, strategy, rng);
      EXPECT_TRUE(n == 3 || n == 4) << to_string(strategy) << " gave " << n;
    }
    // History covers everything but the target: fall back to corpus minus target.
    for (int i = 0; i < 50; ++i) {
      const ItemIndex n = sample_negative(example({1, 2, 3, 4}, 0), targets, corpus, e, strategy, rng);
      EXPECT_NE(n, 0);
      EXPECT_LT(n, 5);
    }
  }
  EXPECT_EQ(parse_strategy("hard_cosine"), NegativeStrategy::HardCosine);
  EXPECT_THROW(parse_strategy("nearest"), ConfigError);
}

TEST(AdaptiveLambda, Examples) {
  EXPECT_EQ(adaptive_lambda(1000, 1.0, 1000, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(adaptive_lambda(500, 0.0, 1000, 0.5), 0.75);
  EXPECT_DOUBLE_EQ(adaptive_lambda(0, -1.0, 1000, 0.5), 1.5);
  EXPECT_NEAR(adaptive_lambda(1, -1.0, 1000, 0.5), 1.4995, 1e-15);
  EXPECT_THROW(adaptive_lambda(1001, 0.0, 1000, 0.5), ContractViolation);
  EXPECT_THROW(adaptive_lambda(3, 1.5, 1000, 0.5), ContractViolation);
}

TEST(AdaptiveLambda, BoundedAndMonotone) {
  const int T = 50;
  const double base = 0.7;
  for (int t = 1; t <= T; ++t) {
    double prev_d = adaptive_lambda(t, -1.0, T, base);
    for (int k = -19; k <= 20; ++k) {
      const double d = k / 20.0;
      const double l = adaptive_lambda(t, d, T, base);
      EXPECT_GE(l, 0.0);
      EXPECT_LE(l, base * (3.0 - 1.0 / T) + 1e-15);
      EXPECT_LE(l, prev_d);
      prev_d = l;
      if (t > 1) EXPECT_LE(l, adaptive_lambda(t - 1, d, T, base));
    }
  }
}

TEST(PreferenceLoss, HandBuiltScalarCase) {
  auto s = NoiseSchedule::linear(1000);
  PreferenceBatch b;
  b.pairs.push_back({0, 1, 0.0});
  b.g = Matrix(1, 1);
  b.x_pos = Matrix::row({0.5});
  b.x_neg = Matrix::row({-2.0});
  b.draws.t = {500};
  b.draws.z = Matrix::row({0.3});
  // Rows are [positive; negative]. Theta errors (0, 1), reference errors (1, 1).
  TapeDenoiser theta = [&](Var x_t, Var, std::span<const double>) {
    return x_t.tape()->input(Matrix(2, 1, std::vector<double>{0.5, -1.0}));
  };
  RefDenoiser ref = [](const Matrix&, const Matrix&, std::span<const double>) {
    return Matrix(2, 1, std::vector<double>{1.5, -1.0});
  };
  Tape tape;
  EXPECT_NEAR(loss_apa(tape, s, b, 0.5, theta, ref).item(), std::log1p(std::exp(-0.75)), 1e-15);
  EXPECT_NEAR(std::log1p(std::exp(-0.75)), 0.38687, 1e-5);
}

TEST(PreferenceLoss, ReferenceInvarianceIsLn2) {
  auto data = tiny_dataset();
  auto m = Model::init(tiny_model(data), 5);
  auto s = NoiseSchedule::linear(100);
  Denoiser ref = m.denoiser;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto b = random_batch(m, s, 7, seed);
    Tape t1;
    EXPECT_NEAR(loss_apa(t1, s, b, 0.5, tape_denoiser(t1, m.denoiser, Binding::Trainable), ref_of(ref)).item(),
                std::log(2.0), 1e-15);
    Tape t2;
    EXPECT_NEAR(loss_diffusion_dpo(t2, s, b, 1.3, tape_denoiser(t2, m.denoiser, Binding::Trainable), ref_of(ref)).item(),
                std::log(2.0), 1e-15);
  }
}

TEST(PreferenceLoss, ZeroLambdaIsLn2) {
  auto data = tiny_dataset();
  auto m = Model::init(tiny_model(data), 6);
  auto other = Model::init(tiny_model(data), 7);
  auto s = NoiseSchedule::linear(100);
  auto b = random_batch(m, s, 5, 1);
  Tape t;
  EXPECT_NEAR(loss_diffusion_dpo(t, s, b, 0.0, tape_denoiser(t, m.denoiser, Binding::Trainable), ref_of(other.denoiser)).item(),
              std::log(2.0), 1e-15);
  // t = T with identical items: adaptive lambda vanishes.
  PreferenceBatch same = b;
  for (auto& p : same.pairs) p.d = 1.0;
  for (int& step : same.draws.t) step = 100;
  Tape u;
  EXPECT_NEAR(loss_apa(u, s, same, 0.5, tape_denoiser(u, m.denoiser, Binding::Trainable), ref_of(other.denoiser)).item(),
              std::log(2.0), 1e-15);
}

TEST(PreferenceLoss, FixedLambdaMatchesAdaptivePerPair) {
  auto data = tiny_dataset();
  auto m = Model::init(tiny_model(data), 8);
  auto other = Model::init(tiny_model(data), 9);
  auto s = NoiseSchedule::linear(100);
  auto b = random_batch(m, s, 1, 3);
  const double lambda = adaptive_lambda(b.draws.t[0], b.pairs[0].d, 100, 0.5);
  Tape t1;
  const double apa = loss_apa(t1, s, b, 0.5, tape_denoiser(t1, m.denoiser, Binding::Trainable), ref_of(other.denoiser)).item();
  Tape t2;
  const double dpo = loss_diffusion_dpo(t2, s, b, lambda, tape_denoiser(t2, m.denoiser, Binding::Trainable), ref_of(other.denoiser)).item();
  EXPECT_EQ(apa, dpo);
}

TEST(PreferenceLoss, NonFiniteBracketNamesPair) {
  auto s = NoiseSchedule::linear(10);
  PreferenceBatch b;
  b.pairs = {{3, 4, 0.0}};
  b.g = Matrix(1, 1);
  b.x_pos = Matrix::row({1.0});
  b.x_neg = Matrix::row({2.0});
  b.draws.t = {5};
  b.draws.z = Matrix::row({0.0});
  TapeDenoiser theta = [](Var x_t, Var, std::span<const double>) { return x_t; };
  RefDenoiser ref = [](const Matrix&, const Matrix&, std::span<const double>) {
    return Matrix(2, 1, std::vector<double>{HUGE_VAL, 0.0});
  };
  Tape tape;
  try {
    loss_apa(tape, s, b, 0.5, theta, ref);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("positive 3"), std::string::npos);
  }
}

TEST(PreferenceLoss, FiniteDifferences) {
  auto data = tiny_dataset();
  auto m = Model::init(tiny_model(data), 10);
  auto ref_model = Model::init(tiny_model(data), 11);
  auto s = NoiseSchedule::linear(60);
  auto b = random_batch(m, s, 6, 12);
  auto params = m.denoiser.parameters();
  auto apa = check_gradients(params, [&](Tape& tape) {
    return loss_apa(tape, s, b, 0.5, tape_denoiser(tape, m.denoiser, Binding::Trainable), ref_of(ref_model.denoiser));
  });
  EXPECT_LT(apa.max_rel_error, 1e-4);
  auto dpo = check_gradients(params, [&](Tape& tape) {
    return loss_diffusion_dpo(tape, s, b, 0.8, tape_denoiser(tape, m.denoiser, Binding::Trainable), ref_of(ref_model.denoiser));
  });
  EXPECT_LT(dpo.max_rel_error, 1e-4);
}

TEST(Finetuning, ZeroEpochsKeepsDenoiser) {
  auto data = tiny_dataset();
  auto m = Model::init(tiny_model(data), 13);
  AlignConfig cfg;
  cfg.epochs = 0;
  auto r = run_finetuning(data.split, data.corpus, m, NoiseSchedule::linear(20), cfg);
  auto a = r.model.denoiser.parameters();
  auto b = m.denoiser.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
}

TEST(Finetuning, EncoderFrozenAndDeterministic) {
  auto data = tiny_dataset(200, 20, 4);
  auto m = Model::init(tiny_model(data), 14);
  AlignConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-2;
  cfg.seed = 3;
  auto s = NoiseSchedule::linear(20);
  std::vector<std::vector<ItemIndex>> h;
  for (const auto& e : data.split.test) h.push_back(e.history);
  const Matrix g_before = m.encoder.encode(h);

  auto a = run_finetuning(data.split, data.corpus, m, s, cfg);
  auto b = run_finetuning(data.split, data.corpus, m, s, cfg);
  EXPECT_EQ(a.model.encoder.encode(h), g_before);
  auto ea = a.model.encoder.parameters();
  auto em = m.encoder.parameters();
  for (std::size_t i = 0; i < ea.size(); ++i) EXPECT_EQ(ea[i]->value, em[i]->value);
  auto da = a.model.denoiser.parameters();
  auto db = b.model.denoiser.parameters();
  bool moved = false;
  auto dm = m.denoiser.parameters();
  for (std::size_t i = 0; i < da.size(); ++i) {
    EXPECT_EQ(da[i]->value, db[i]->value);
    moved = moved || da[i]->value != dm[i]->value;
  }
  EXPECT_TRUE(moved);
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_GT(a.log[0].mean_lambda_beta, 0.0);
  // First epoch starts at theta == ref, so every pair contributes about ln 2.
  EXPECT_NEAR(a.log[0].loss_apa, std::log(2.0), 0.2);
}

TEST(Finetuning, ConfigValidation) {
  AlignConfig cfg;
  cfg.lambda_base = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
