#include "tarec/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tarec/error.hpp"

namespace tarec {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Tape& tape_of(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw GraphError("operand is not attached to a tape");
    if (t != nullptr && v.tape() != t) throw GraphError("operands live on different tapes");
    t = v.tape();
  }
  for (const Var& v : vars) t->check(v);
  return *t;
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw GraphError(std::string(op) + ": shape " + shape(a.value()) + " vs " + shape(b.value()));
  }
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw GraphError("empty Var");
  return tape_->value(*this);
}

double Var::item() const {
  const Matrix& m = value();
  if (m.rows() != 1 || m.cols() != 1) throw GraphError("item() on non-scalar " + shape(m));
  return m[0];
}

void Tape::check(Var v) const {
  if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    throw GraphError("Var does not belong to this tape");
  }
}

Var Tape::input(Matrix value) {
  if (sealed_) throw GraphError("tape already replayed");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(const Matrix& value) {
  if (sealed_) throw GraphError("tape already replayed");
  Node n;
  n.external = &value;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
  if (sealed_) throw GraphError("tape already replayed");
  Node n;
  n.external = &p.value;
  if (record_) {
    n.requires_grad = true;
    n.param = &p;
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, std::vector<Var> parents, Backward backward) {
  if (sealed_) throw GraphError("tape already replayed");
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& p : parents) {
      if (nodes_[static_cast<std::size_t>(p.id_)].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

bool Tape::requires_grad(Var v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id_)].requires_grad;
}

const Matrix& Tape::value(Var v) const {
  check(v);
  return node_value(nodes_[static_cast<std::size_t>(v.id_)]);
}

Matrix& Tape::grad_ref(Var v) {
  check(v);
  Node& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (n.grad.empty()) {
    const Matrix& val = node_value(n);
    n.grad = Matrix(val.rows(), val.cols());
  }
  return n.grad;
}

const Matrix& Tape::grad_of(int id) const { return nodes_.at(static_cast<std::size_t>(id)).grad; }

Matrix Tape::grad(Var v) const {
  check(v);
  const Node& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (n.grad.empty()) {
    const Matrix& val = node_value(n);
    return Matrix(val.rows(), val.cols());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  check(loss);
  if (!record_) throw GraphError("backward() on a non-recording tape");
  if (sealed_) throw GraphError("backward() called twice on one tape");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) throw GraphError("loss must be 1x1, got " + shape(lv));
  sealed_ = true;
  if (!nodes_[static_cast<std::size_t>(loss.id_)].requires_grad) return;
  grad_ref(loss)[0] = 1.0;
  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward();
  }
  for (Node& n : nodes_) {
    if (n.param != nullptr && !n.grad.empty()) {
      Matrix& g = n.param->grad;
      if (g.empty()) g = Matrix(n.grad.rows(), n.grad.cols());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
}

namespace ad {

Var matmul(Var a, Var b) {
  Tape& t = tape_of({a, b});
  if (a.cols() != b.rows()) {
    throw GraphError("matmul: " + shape(a.value()) + " * " + shape(b.value()));
  }
  Matrix out;
  tarec::matmul(a.value(), b.value(), out);
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), {a, b}, [&t, a, b, id]() {
    const Matrix& g = t.grad_of(id);
    if (t.requires_grad(a)) matmul_a_bt_acc(g, t.value(b), t.grad_ref(a));
    if (t.requires_grad(b)) matmul_at_b_acc(t.value(a), g, t.grad_ref(b));
  });
}

namespace {

template <class Fwd, class Bwd>
Var binary_elementwise(Var a, Var b, const char* name, Fwd fwd, Bwd bwd) {
  Tape& t = tape_of({a, b});
  require_same(a, b, name);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), {a, b}, [&t, a, b, id, bwd]() {
    const Matrix& g = t.grad_of(id);
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    const bool ga = t.requires_grad(a), gb = t.requires_grad(b);
    Matrix* da = ga ? &t.grad_ref(a) : nullptr;
    Matrix* db = gb ? &t.grad_ref(b) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto [pa, pb] = bwd(av[i], bv[i]);
      if (da) (*da)[i] += g[i] * pa;
      if (db) (*db)[i] += g[i] * pb;
    }
  });
}

/// f gives value, df gives derivative from (input, output).
template <class F, class DF>
Var unary_elementwise(Var a, F f, DF df) {
  Tape& t = tape_of({a});
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), {a}, [&t, a, id, df]() {
    const Matrix& g = t.grad_of(id);
    const Matrix& av = t.value(a);
    Matrix& da = t.grad_ref(a);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * df(av[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

Var scale(Var a, double s) {
  return unary_elementwise(
      a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var silu(Var a) {
  return unary_elementwise(
      a, [](double x) { return x * sigmoid(x); },
      [](double x) {
        const double s = sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var tanh(Var a) {
  return unary_elementwise(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double y = std::tanh(x);
        return 1.0 - y * y;
      });
}

Var softplus(Var a) {
  return unary_elementwise(a, stable_softplus, sigmoid);
}

Var log_sigmoid(Var a) {
  return unary_elementwise(
      a, [](double x) { return -stable_softplus(-x); }, [](double x) { return sigmoid(-x); });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of({a, row});
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw GraphError("add_row: " + shape(a.value()) + " + " + shape(row.value()));
  }
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv[c];
  }
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), {a, row}, [&t, a, row, id]() {
    const Matrix& g = t.grad_of(id);
    if (t.requires_grad(a)) {
      Matrix& da = t.grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (t.requires_grad(row)) {
      Matrix& dr = t.grad_ref(row);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) dr[c] += g(r, c);
      }
    }
  });
}

Var scale_rows(Var a, std::span<const double> factors) {
  Tape& t = tape_of({a});
  if (factors.size() != a.rows()) throw GraphError("scale_rows: factor count != rows");
  std::vector<double> f(factors.begin(), factors.end());
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= f[r];
  }
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), {a}, [&t, a, id, f = std::move(f)]() {
    const Matrix& g = t.grad_of(id);
    Matrix& da = t.grad_ref(a);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) da(r, c) += g(r, c) * f[r];
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of({x, gamma, beta});
  const std::size_t n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw GraphError("layer_norm: affine parameters must be 1x" + std::to_string(n));
  }
  const Matrix& xv = x.value();
  const Matrix& gv = gamma.value();
  const Matrix& bv = beta.value();
  Matrix out(xv.rows(), n);
  Matrix xhat(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xv(r, c);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xv(r, c) - mu) * (xv(r, c) - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (xv(r, c) - mu) * inv_std[r];
      out(r, c) = xhat(r, c) * gv[c] + bv[c];
    }
  }
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), {x, gamma, beta},
                [&t, x, gamma, beta, id, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
                  const Matrix& g = t.grad_of(id);
                  const Matrix& gv = t.value(gamma);
                  const std::size_t n = g.cols();
                  if (t.requires_grad(gamma) || t.requires_grad(beta)) {
                    Matrix* dg = t.requires_grad(gamma) ? &t.grad_ref(gamma) : nullptr;
                    Matrix* db = t.requires_grad(beta) ? &t.grad_ref(beta) : nullptr;
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      for (std::size_t c = 0; c < n; ++c) {
                        if (dg) (*dg)[c] += g(r, c) * xhat(r, c);
                        if (db) (*db)[c] += g(r, c);
                      }
                    }
                  }
                  if (!t.requires_grad(x)) return;
                  Matrix& dx = t.grad_ref(x);
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                      const double dxh = g(r, c) * gv[c];
                      m1 += dxh;
                      m2 += dxh * xhat(r, c);
                    }
                    m1 /= static_cast<double>(n);
                    m2 /= static_cast<double>(n);
                    for (std::size_t c = 0; c < n; ++c) {
                      const double dxh = g(r, c) * gv[c];
                      dx(r, c) += inv_std[r] * (dxh - m1 - xhat(r, c) * m2);
                    }
                  }
                });
}

Var gather_rows(Var table, std::span<const int> index) {
  Tape& t = tape_of({table});
  const Matrix& tv = table.value();
  std::vector<int> idx(index.begin(), index.end());
  Matrix out(idx.size(), tv.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= tv.rows()) {
      throw GraphError("gather_rows: index " + std::to_string(idx[r]) + " outside table of " +
                       std::to_string(tv.rows()) + " rows");
    }
    auto src = tv.row_span(static_cast<std::size_t>(idx[r]));
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), {table}, [&t, table, id, idx = std::move(idx)]() {
    const Matrix& g = t.grad_of(id);
    Matrix& dt = t.grad_ref(table);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto dst = dt.row_span(static_cast<std::size_t>(idx[r]));
      auto src = g.row_span(r);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw GraphError("concat_cols: no operands");
  Tape* tp = parts[0].tape();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (!p.valid() || p.tape() != tp) throw GraphError("concat_cols: operands on different tapes");
    tp->check(p);
    if (p.rows() != parts[0].rows()) throw GraphError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tape& t = *tp;
  const std::size_t rows = parts[0].rows();
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
    }
    off += pv.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), ps, [&t, ps, id]() {
    const Matrix& g = t.grad_of(id);
    std::size_t off = 0;
    for (const Var& p : ps) {
      const std::size_t pc = t.value(p).cols();
      if (t.requires_grad(p)) {
        Matrix& dp = t.grad_ref(p);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < pc; ++c) dp(r, c) += g(r, off + c);
        }
      }
      off += pc;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw GraphError("concat_rows: no operands");
  Tape* tp = parts[0].tape();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (!p.valid() || p.tape() != tp) throw GraphError("concat_rows: operands on different tapes");
    tp->check(p);
    if (p.cols() != parts[0].cols()) throw GraphError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Tape& t = *tp;
  Matrix out(rows, parts[0].cols());
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    std::copy(pv.values().begin(), pv.values().end(), out.data() + off);
    off += pv.size();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), ps, [&t, ps, id]() {
    const Matrix& g = t.grad_of(id);
    std::size_t off = 0;
    for (const Var& p : ps) {
      const std::size_t n = t.value(p).size();
      if (t.requires_grad(p)) {
        Matrix& dp = t.grad_ref(p);
        for (std::size_t i = 0; i < n; ++i) dp[i] += g[off + i];
      }
      off += n;
    }
  });
}

Var replace_rows(Var a, const std::vector<bool>& mask, Var row) {
  Tape& t = tape_of({a, row});
  if (mask.size() != a.rows() || row.rows() != 1 || row.cols() != a.cols()) {
    throw GraphError("replace_rows: mask/row shape mismatch");
  }
  Matrix out = a.value();
  const Matrix& rv = row.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    if (!mask[r]) continue;
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = rv[c];
  }
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), {a, row}, [&t, a, row, id, mask]() {
    const Matrix& g = t.grad_of(id);
    Matrix* da = t.requires_grad(a) ? &t.grad_ref(a) : nullptr;
    Matrix* dr = t.requires_grad(row) ? &t.grad_ref(row) : nullptr;
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) {
        if (mask[r]) {
          if (dr) (*dr)[c] += g(r, c);
        } else if (da) {
          (*da)(r, c) += g(r, c);
        }
      }
    }
  });
}

Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads,
              const std::vector<bool>& key_mask) {
  Tape& t = tape_of({q, k, v});
  require_same(q, k, "attention");
  require_same(q, v, "attention");
  const std::size_t d = q.cols();
  if (q.rows() != batch * seq || key_mask.size() != batch * seq || heads == 0 || d % heads != 0) {
    throw GraphError("attention: inconsistent batch/seq/heads for " + shape(q.value()));
  }
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  // probs[((b * heads + h) * seq + i) * seq + j]
  std::vector<double> probs(batch * heads * seq * seq, 0.0);
  Matrix out(batch * seq, d);
  std::vector<double> scores(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < seq; ++i) {
        const std::size_t qi = b * seq + i;
        double mx = -std::numeric_limits<double>::infinity();
        bool visible = false;
        bool nan = false;
        for (std::size_t j = 0; j < seq; ++j) {
          const std::size_t kj = b * seq + j;
          if (!key_mask[kj]) continue;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qv(qi, c0 + c) * kv(kj, c0 + c);
          scores[j] = s * inv;
          visible = true;
          nan = nan || std::isnan(scores[j]);
          mx = std::max(mx, scores[j]);
        }
        if (!visible) throw GraphError("attention: a sequence has no visible keys");
        if (nan || !std::isfinite(mx)) {
          for (std::size_t c = 0; c < dh; ++c) out(qi, c0 + c) = std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        double z = 0.0;
        double* p = &probs[((b * heads + h) * seq + i) * seq];
        for (std::size_t j = 0; j < seq; ++j) {
          if (!key_mask[b * seq + j]) continue;
          p[j] = std::exp(scores[j] - mx);
          z += p[j];
        }
        for (std::size_t j = 0; j < seq; ++j) {
          if (p[j] == 0.0) continue;
          p[j] /= z;
          const std::size_t vj = b * seq + j;
          for (std::size_t c = 0; c < dh; ++c) out(qi, c0 + c) += p[j] * vv(vj, c0 + c);
        }
      }
    }
  }
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), {q, k, v},
                [&t, q, k, v, id, batch, seq, heads, dh, inv, probs = std::move(probs)]() {
                  const Matrix& g = t.grad_of(id);
                  const Matrix& qv = t.value(q);
                  const Matrix& kv = t.value(k);
                  const Matrix& vv = t.value(v);
                  Matrix* dq = t.requires_grad(q) ? &t.grad_ref(q) : nullptr;
                  Matrix* dk = t.requires_grad(k) ? &t.grad_ref(k) : nullptr;
                  Matrix* dv = t.requires_grad(v) ? &t.grad_ref(v) : nullptr;
                  std::vector<double> dp(seq);
                  for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t h = 0; h < heads; ++h) {
                      const std::size_t c0 = h * dh;
                      for (std::size_t i = 0; i < seq; ++i) {
                        const std::size_t qi = b * seq + i;
                        const double* p = &probs[((b * heads + h) * seq + i) * seq];
                        double dot_pdp = 0.0;
                        for (std::size_t j = 0; j < seq; ++j) {
                          dp[j] = 0.0;
                          if (p[j] == 0.0) continue;
                          const std::size_t vj = b * seq + j;
                          for (std::size_t c = 0; c < dh; ++c) {
                            dp[j] += g(qi, c0 + c) * vv(vj, c0 + c);
                            if (dv) (*dv)(vj, c0 + c) += p[j] * g(qi, c0 + c);
                          }
                          dot_pdp += p[j] * dp[j];
                        }
                        for (std::size_t j = 0; j < seq; ++j) {
                          if (p[j] == 0.0) continue;
                          const double ds = p[j] * (dp[j] - dot_pdp) * inv;
                          const std::size_t kj = b * seq + j;
                          for (std::size_t c = 0; c < dh; ++c) {
                            if (dq) (*dq)(qi, c0 + c) += ds * kv(kj, c0 + c);
                            if (dk) (*dk)(kj, c0 + c) += ds * qv(qi, c0 + c);
                          }
                        }
                      }
                    }
                  }
                });
}

Var row_sq_norm(Var a) {
  Tape& t = tape_of({a});
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) out[r] = squared_norm(av.row_span(r));
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), {a}, [&t, a, id]() {
    const Matrix& g = t.grad_of(id);
    const Matrix& av = t.value(a);
    Matrix& da = t.grad_ref(a);
    for (std::size_t r = 0; r < av.rows(); ++r) {
      for (std::size_t c = 0; c < av.cols(); ++c) da(r, c) += 2.0 * g[r] * av(r, c);
    }
  });
}

Var cosine_rows(Var a, Var b) {
  Tape& t = tape_of({a, b});
  require_same(a, b, "cosine_rows");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const double na = norm(av.row_span(r)), nb = norm(bv.row_span(r));
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine_rows: zero-norm row");
    out[r] = dot(av.row_span(r), bv.row_span(r)) / (na * nb);
  }
  const int id = static_cast<int>(t.size());
  return t.push(std::move(out), {a, b}, [&t, a, b, id]() {
    const Matrix& g = t.grad_of(id);
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    Matrix* da = t.requires_grad(a) ? &t.grad_ref(a) : nullptr;
    Matrix* db = t.requires_grad(b) ? &t.grad_ref(b) : nullptr;
    for (std::size_t r = 0; r < av.rows(); ++r) {
      const double na = norm(av.row_span(r)), nb = norm(bv.row_span(r));
      const double c = dot(av.row_span(r), bv.row_span(r)) / (na * nb);
      for (std::size_t j = 0; j < av.cols(); ++j) {
        if (da) (*da)(r, j) += g[r] * (bv(r, j) / (na * nb) - c * av(r, j) / (na * na));
        if (db) (*db)(r, j) += g[r] * (av(r, j) / (na * nb) - c * bv(r, j) / (nb * nb));
      }
    }
  });
}

Var sum(Var a) {
  Tape& t = tape_of({a});
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  const int id = static_cast<int>(t.size());
  return t.push(Matrix(1, 1, s), {a}, [&t, a, id]() {
    const double g = t.grad_of(id)[0];
    Matrix& da = t.grad_ref(a);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0.0) throw GraphError("mean of empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var detach(Var a) {
  Tape& t = tape_of({a});
  return t.input(a.value());
}

}  // namespace ad
}  // namespace tarec
