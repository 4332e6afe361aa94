#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "tarec/autodiff.hpp"
#include "tarec/error.hpp"
#include "tarec/rng.hpp"

using namespace tarec;
using tarec::testing::check_gradients;

namespace {

Parameter random_param(const std::string& name, std::size_t r, std::size_t c, std::uint64_t seed,
                       double scale = 1.0) {
  Rng rng(seed);
  return Parameter(name, gaussian(r, c, rng, scale));
}

// Contracts an arbitrary matrix to a scalar with fixed random weights so
// that every output entry carries a distinct gradient.
Var contract(Tape& tape, Var v, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ad::sum(ad::mul(v, tape.input(gaussian(v.rows(), v.cols(), rng))));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(Autodiff, SquaredNormGradientIsTwoP) {
  Parameter p = random_param("p", 1, 7, 1);
  Tape tape;
  Var v = tape.param(p);
  tape.backward(ad::sum(ad::mul(v, v)));
  for (std::size_t i = 0; i < 7; ++i) EXPECT_DOUBLE_EQ(p.grad[i], 2.0 * p.value[i]);
}

TEST(Autodiff, ConstantLossGivesZeroGradients) {
  Parameter p = random_param("p", 3, 3, 2);
  Tape tape;
  Var v = tape.param(p);
  Var c = ad::scale(ad::sum(ad::detach(v)), 1.0);
  tape.backward(c);
  for (std::size_t i = 0; i < p.grad.size(); ++i) EXPECT_EQ(p.grad[i], 0.0);
}

TEST(Autodiff, ElementwiseOps) {
  Parameter a = random_param("a", 3, 4, 3);
  Parameter b = random_param("b", 3, 4, 4);
  auto r = check_gradients({&a, &b}, [&](Tape& t) {
    Var x = t.param(a);
    Var y = t.param(b);
    Var s = ad::add(ad::mul(ad::silu(x), ad::tanh(y)), ad::sub(ad::softplus(x), ad::log_sigmoid(y)));
    return contract(t, ad::scale(s, 0.7));
  });
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Autodiff, MatmulAddRowScaleRows) {
  Parameter a = random_param("a", 4, 3, 5);
  Parameter b = random_param("b", 3, 5, 6);
  Parameter row = random_param("row", 1, 5, 7);
  const std::vector<double> factors = {0.5, -1.0, 2.0, 0.0};
  auto r = check_gradients({&a, &b, &row}, [&](Tape& t) {
    Var m = ad::matmul(t.param(a), t.param(b));
    return contract(t, ad::scale_rows(ad::add_row(m, t.param(row)), factors));
  });
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Autodiff, LayerNorm) {
  Parameter x = random_param("x", 5, 6, 8);
  Parameter gamma = random_param("gamma", 1, 6, 9);
  Parameter beta = random_param("beta", 1, 6, 10);
  auto r = check_gradients({&x, &gamma, &beta}, [&](Tape& t) {
    return contract(t, ad::layer_norm(t.param(x), t.param(gamma), t.param(beta)));
  });
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Autodiff, GatherConcatReplace) {
  Parameter table = random_param("table", 5, 3, 11);
  Parameter other = random_param("other", 4, 2, 12);
  Parameter row = random_param("row", 1, 5, 13);
  const std::vector<int> idx = {4, 0, 4, 2};
  const std::vector<bool> mask = {false, true, false, true, true, false, false, false};
  auto r = check_gradients({&table, &other, &row}, [&](Tape& t) {
    Var g = ad::gather_rows(t.param(table), idx);
    Var parts[] = {g, t.param(other)};
    Var wide = ad::concat_cols(parts);
    Var stacked_parts[] = {wide, ad::scale(wide, -0.5)};
    Var tall = ad::concat_rows(stacked_parts);
    return contract(t, ad::replace_rows(tall, mask, t.param(row)));
  });
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Autodiff, Attention) {
  const std::size_t batch = 2;
  const std::size_t seq = 3;
  const std::size_t heads = 2;
  Parameter q = random_param("q", batch * seq, 4, 14);
  Parameter k = random_param("k", batch * seq, 4, 15);
  Parameter v = random_param("v", batch * seq, 4, 16);
  const std::vector<bool> key_mask = {true, false, true, true, true, false};
  auto r = check_gradients({&q, &k, &v}, [&](Tape& t) {
    return contract(t, ad::attention(t.param(q), t.param(k), t.param(v), batch, seq, heads, key_mask));
  });
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Autodiff, AttentionIgnoresMaskedKeys) {
  Rng rng(17);
  Matrix q = gaussian(3, 2, rng);
  Matrix k = gaussian(3, 2, rng);
  Matrix v = gaussian(3, 2, rng);
  const std::vector<bool> mask = {true, false, true};
  Tape t1(false);
  auto out1 = ad::attention(t1.input(q), t1.input(k), t1.input(v), 1, 3, 1, mask).value();
  k(1, 0) += 5.0;
  v(1, 1) -= 3.0;
  Tape t2(false);
  auto out2 = ad::attention(t2.input(q), t2.input(k), t2.input(v), 1, 3, 1, mask).value();
  EXPECT_EQ(out1, out2);
  Tape t3(false);
  EXPECT_THROW(ad::attention(t3.input(q), t3.input(k), t3.input(v), 1, 3, 1, {false, false, false}),
               GraphError);
}

TEST(Autodiff, NormsAndReductions) {
  Parameter a = random_param("a", 4, 3, 18);
  Parameter b = random_param("b", 4, 3, 19);
  auto r = check_gradients({&a, &b}, [&](Tape& t) {
    Var x = t.param(a);
    Var y = t.param(b);
    Var parts[] = {ad::row_sq_norm(x), ad::cosine_rows(x, y)};
    return ad::add(contract(t, ad::concat_cols(parts)), ad::mean(ad::mul(x, y)));
  });
  EXPECT_LT(r.max_rel_error, kTol);
}

TEST(Autodiff, DetachBlocksGradient) {
  Parameter p = random_param("p", 2, 2, 20);
  Tape tape;
  Var v = tape.param(p);
  tape.backward(ad::sum(ad::mul(v, ad::detach(v))));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p.grad[i], p.value[i]);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  Parameter p = random_param("p", 1, 3, 21);
  Tape tape;
  Var v = tape.param(p);
  Var s = ad::silu(v);
  tape.backward(ad::add(ad::sum(s), ad::sum(ad::scale(s, 2.0))));
  for (std::size_t i = 0; i < 3; ++i) {
    const double x = p.value[i];
    const double sig = 1.0 / (1.0 + std::exp(-x));
    EXPECT_NEAR(p.grad[i], 3.0 * (sig + x * sig * (1 - sig)), 1e-14);
  }
}

TEST(Autodiff, GraphErrors) {
  Tape a;
  Tape b;
  Var x = a.input(Matrix(2, 2, 1.0));
  Var y = b.input(Matrix(2, 2, 1.0));
  EXPECT_THROW(ad::add(x, y), GraphError);
  EXPECT_THROW(ad::add(x, a.input(Matrix(2, 3))), GraphError);
  EXPECT_THROW(ad::matmul(x, a.input(Matrix(3, 1))), GraphError);
  EXPECT_THROW(a.backward(x), GraphError);
  Var loss = ad::sum(x);
  a.backward(loss);
  EXPECT_THROW(a.backward(loss), GraphError);
  EXPECT_THROW(a.input(Matrix(1, 1)), GraphError);
  Tape values(false);
  EXPECT_THROW(values.backward(ad::sum(values.input(Matrix(1, 1)))), GraphError);
}
