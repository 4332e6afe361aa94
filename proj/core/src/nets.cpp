#include "tarec/nets.hpp"

#include <cmath>
#include <string>

#include "tarec/error.hpp"

namespace tarec {

Var bind(Tape& tape, Parameter& p, Binding binding) {
  return binding == Binding::Trainable ? tape.param(p) : tape.constant(p.value);
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng)
    : weight(name + ".weight",
             gaussian(static_cast<std::size_t>(in), static_cast<std::size_t>(out), rng,
                      1.0 / std::sqrt(static_cast<double>(in)))),
      bias(name + ".bias", Matrix(1, static_cast<std::size_t>(out))) {}

Var Linear::operator()(Tape& tape, Var x, Binding binding) {
  return ad::add_row(ad::matmul(x, bind(tape, weight, binding)), bind(tape, bias, binding));
}

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gamma(name + ".gamma", Matrix(1, static_cast<std::size_t>(dim), 1.0)),
      beta(name + ".beta", Matrix(1, static_cast<std::size_t>(dim))) {}

Var LayerNorm::operator()(Tape& tape, Var x, Binding binding) {
  return ad::layer_norm(x, bind(tape, gamma, binding), bind(tape, beta, binding));
}

GuidanceEncoder::GuidanceEncoder(const ModelConfig& config, Rng& rng) : config_(config) {
  const int d = config.dim;
  if (config.num_items < 1 || d < 1 || config.seq_len < 1 || config.encoder_heads < 1 ||
      d % config.encoder_heads != 0 || config.encoder_layers < 0 || config.ff_mult < 1) {
    throw ConfigError("encoder: invalid model configuration");
  }
  const auto V = static_cast<std::size_t>(config.num_items);
  const auto ud = static_cast<std::size_t>(d);
  item_embeddings_ = Parameter("encoder.item_embeddings", gaussian(V + 1, ud, rng));
  for (std::size_t c = 0; c < ud; ++c) item_embeddings_.value(V, c) = 0.0;
  positional_ = Parameter("encoder.positional", gaussian(static_cast<std::size_t>(config.seq_len), ud, rng));
  start_ = Parameter("encoder.start", gaussian(1, ud, rng));
  for (int l = 0; l < config.encoder_layers; ++l) {
    const std::string p = "encoder.block" + std::to_string(l);
    TransformerBlock b;
    b.ln_attn = LayerNorm(p + ".ln_attn", d);
    b.query = Linear(p + ".query", d, d, rng);
    b.key = Linear(p + ".key", d, d, rng);
    b.value = Linear(p + ".value", d, d, rng);
    b.out = Linear(p + ".out", d, d, rng);
    b.ln_ff = LayerNorm(p + ".ln_ff", d);
    b.ff_in = Linear(p + ".ff_in", d, d * config.ff_mult, rng);
    b.ff_out = Linear(p + ".ff_out", d * config.ff_mult, d, rng);
    blocks_.push_back(std::move(b));
  }
  ln_final_ = LayerNorm("encoder.ln_final", d);
  readout_ = Linear("encoder.readout", d, d, rng);
  dummy_ = Parameter("encoder.dummy_token", gaussian(1, ud, rng));
}

std::vector<Parameter*> GuidanceEncoder::parameters() {
  std::vector<Parameter*> ps{&item_embeddings_, &positional_, &start_};
  for (auto& b : blocks_) {
    for (Parameter* p : {&b.ln_attn.gamma, &b.ln_attn.beta, &b.query.weight, &b.query.bias,
                         &b.key.weight, &b.key.bias, &b.value.weight, &b.value.bias,
                         &b.out.weight, &b.out.bias, &b.ln_ff.gamma, &b.ln_ff.beta,
                         &b.ff_in.weight, &b.ff_in.bias, &b.ff_out.weight, &b.ff_out.bias}) {
      ps.push_back(p);
    }
  }
  for (Parameter* p : {&ln_final_.gamma, &ln_final_.beta, &readout_.weight, &readout_.bias, &dummy_}) {
    ps.push_back(p);
  }
  return ps;
}

Var GuidanceEncoder::forward(Tape& tape, std::span<const std::vector<ItemIndex>> histories,
                             const std::vector<bool>& drop, Binding binding) {
  const std::size_t B = histories.size();
  const auto L = static_cast<std::size_t>(config_.seq_len);
  const std::size_t S = L + 1;
  const ItemIndex pad = config_.num_items;
  if (B == 0) throw ContractViolation("encoder: empty batch");
  if (drop.size() != B) throw ContractViolation("encoder: drop mask size != batch");

  std::vector<int> item_idx(B * L);
  std::vector<int> pos_idx(B * L);
  std::vector<bool> key_mask(B * S, true);
  for (std::size_t b = 0; b < B; ++b) {
    if (histories[b].size() != L) {
      throw ContractViolation("encoder: history length " + std::to_string(histories[b].size()) +
                              " != L = " + std::to_string(L));
    }
    for (std::size_t i = 0; i < L; ++i) {
      const ItemIndex it = histories[b][i];
      if (it < 0 || it > pad) {
        throw IndexError("history item index " + std::to_string(it) + " outside [0, " +
                         std::to_string(pad) + "]");
      }
      item_idx[b * L + i] = it;
      pos_idx[b * L + i] = static_cast<int>(i);
      key_mask[b * S + 1 + i] = it != pad;
    }
  }
  Var items = ad::gather_rows(bind(tape, item_embeddings_, binding), item_idx);
  Var pos = ad::gather_rows(bind(tape, positional_, binding), pos_idx);
  Var tokens = ad::add(items, pos);
  // Interleave: row b*S is the start token, rows b*S+1.. are the history.
  const Var stacked_parts[] = {bind(tape, start_, binding), tokens};
  Var stacked = ad::concat_rows(stacked_parts);
  std::vector<int> order(B * S);
  for (std::size_t b = 0; b < B; ++b) {
    order[b * S] = 0;
    for (std::size_t i = 0; i < L; ++i) order[b * S + 1 + i] = static_cast<int>(1 + b * L + i);
  }
  Var h = ad::gather_rows(stacked, order);

  for (auto& blk : blocks_) {
    Var a = blk.ln_attn(tape, h, binding);
    Var att = ad::attention(blk.query(tape, a, binding), blk.key(tape, a, binding),
                            blk.value(tape, a, binding), B, S,
                            static_cast<std::size_t>(config_.encoder_heads), key_mask);
    h = ad::add(h, blk.out(tape, att, binding));
    Var f = blk.ln_ff(tape, h, binding);
    h = ad::add(h, blk.ff_out(tape, ad::silu(blk.ff_in(tape, f, binding)), binding));
  }
  h = ln_final_(tape, h, binding);
  std::vector<int> last(B);
  for (std::size_t b = 0; b < B; ++b) last[b] = static_cast<int>(b * S + S - 1);
  Var g = readout_(tape, ad::gather_rows(h, last), binding);
  bool any_drop = false;
  for (bool x : drop) any_drop = any_drop || x;
  if (any_drop) g = ad::replace_rows(g, drop, bind(tape, dummy_, binding));
  return g;
}

Matrix GuidanceEncoder::encode(std::span<const std::vector<ItemIndex>> histories) {
  Tape tape(false);
  return forward(tape, histories, std::vector<bool>(histories.size(), false), Binding::Frozen).value();
}

Matrix timestep_embedding(std::span<const double> t, int dim) {
  Matrix out(t.size(), static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      out(r, static_cast<std::size_t>(i)) = std::sin(t[r] * freq);
      out(r, static_cast<std::size_t>(half + i)) = std::cos(t[r] * freq);
    }
  }
  return out;
}

Denoiser::Denoiser(const ModelConfig& config, Rng& rng) : dim_(config.dim) {
  if (config.dim < 1 || config.denoiser_layers < 1 || config.denoiser_hidden_mult < 1) {
    throw ConfigError("denoiser: invalid model configuration");
  }
  const int d = config.dim;
  const int hidden = d * config.denoiser_hidden_mult;
  time_proj_ = Linear("denoiser.time_proj", d, d, rng);
  int in = 3 * d;
  for (int l = 0; l < config.denoiser_layers; ++l) {
    const int out = l + 1 == config.denoiser_layers ? d : hidden;
    layers_.emplace_back("denoiser.mlp" + std::to_string(l), in, out, rng);
    in = out;
  }
}

std::vector<Parameter*> Denoiser::parameters() {
  std::vector<Parameter*> ps{&time_proj_.weight, &time_proj_.bias};
  for (auto& l : layers_) {
    ps.push_back(&l.weight);
    ps.push_back(&l.bias);
  }
  return ps;
}

void Denoiser::zero_output_layer() {
  layers_.back().weight.value.fill(0.0);
  layers_.back().bias.value.fill(0.0);
}

Var Denoiser::forward(Tape& tape, Var x_t, Var g, std::span<const double> t, Binding binding) {
  const auto d = static_cast<std::size_t>(dim_);
  if (x_t.cols() != d || g.cols() != d || x_t.rows() != g.rows() || t.size() != x_t.rows()) {
    throw ShapeError("denoiser: x_t, g and t disagree on shape");
  }
  for (double s : t) {
    if (!std::isfinite(s)) throw NumericError("denoiser: non-finite timestep");
  }
  if (!x_t.value().all_finite() || !g.value().all_finite()) {
    throw NumericError("denoiser: non-finite input");
  }
  Var temb = ad::silu(time_proj_(tape, tape.input(timestep_embedding(t, dim_)), binding));
  const Var parts[] = {x_t, g, temb};
  Var h = ad::concat_cols(parts);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = layers_[l](tape, h, binding);
    if (l + 1 < layers_.size()) h = ad::silu(h);
  }
  return h;
}

Matrix Denoiser::operator()(const Matrix& x_t, const Matrix& g, std::span<const double> t) {
  Tape tape(false);
  return forward(tape, tape.constant(x_t), tape.constant(g), t, Binding::Frozen).value();
}

Matrix Denoiser::operator()(const Matrix& x_t, const Matrix& g, double t) {
  const std::vector<double> ts(x_t.rows(), t);
  return (*this)(x_t, g, ts);
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  Rng rng = make_rng(seed, "init");
  Model m;
  m.config = config;
  m.encoder = GuidanceEncoder(config, rng);
  m.denoiser = Denoiser(config, rng);
  return m;
}

std::vector<Parameter*> Model::parameters() {
  auto ps = encoder.parameters();
  for (Parameter* p : denoiser.parameters()) ps.push_back(p);
  return ps;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (Parameter* p : parameters()) n += p->value.size();
  return n;
}

Matrix encode_guidance(GuidanceEncoder& encoder, std::span<const std::vector<ItemIndex>> histories,
                       double rho, bool training, Rng& rng) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ContractViolation("rho must lie in [0, 1]");
  std::vector<bool> drop(histories.size(), false);
  if (training) {
    std::bernoulli_distribution coin(rho);
    for (std::size_t i = 0; i < drop.size(); ++i) drop[i] = coin(rng);
  }
  Tape tape(false);
  return encoder.forward(tape, histories, drop, Binding::Frozen).value();
}

Matrix guided_denoise(const Matrix& x_t, const Matrix& g, double t, GuidanceEncoder& encoder,
                      Denoiser& denoiser, double w) {
  if (!(w >= 0.0)) throw ContractViolation("guidance scale w must be >= 0");
  Matrix cond = denoiser(x_t, g, t);
  if (w == 0.0) return cond;
  Matrix g_phi(g.rows(), g.cols());
  const Matrix& phi = encoder.dummy_token().value;
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) g_phi(r, c) = phi[c];
  }
  Matrix uncond = denoiser(x_t, g_phi, t);
  Matrix out(cond.rows(), cond.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 + w) * cond[i] - w * uncond[i];
  return out;
}

}  // namespace tarec
