#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tarec/autodiff.hpp"
#include "tarec/corpus.hpp"
#include "tarec/rng.hpp"

namespace tarec {

struct ModelConfig {
  int num_items = 0;  // V; the pad row is index V
  int dim = 64;
  int seq_len = 10;
  int encoder_layers = 1;
  int encoder_heads = 2;
  int ff_mult = 4;
  int denoiser_layers = 3;
  int denoiser_hidden_mult = 4;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Whether a forward pass records gradients for a module's parameters.
enum class Binding { Trainable, Frozen };

Var bind(Tape& tape, Parameter& p, Binding binding);

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng);
  Var operator()(Tape& tape, Var x, Binding binding);
};

struct LayerNorm {
  Parameter gamma;
  Parameter beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);
  Var operator()(Tape& tape, Var x, Binding binding);
};

struct TransformerBlock {
  LayerNorm ln_attn;
  Linear query, key, value, out;
  LayerNorm ln_ff;
  Linear ff_in, ff_out;
};

/// Transformer over the history. A learned start token is always visible so
/// an all-padding history still has something to attend to. The guidance is
/// a projection of the final position.
class GuidanceEncoder {
 public:
  GuidanceEncoder() = default;
  GuidanceEncoder(const ModelConfig& config, Rng& rng);

  /// Batched forward. Rows with drop[r] set get the dummy token instead.
  Var forward(Tape& tape, std::span<const std::vector<ItemIndex>> histories,
              const std::vector<bool>& drop, Binding binding);

  /// Eval-mode guidance for every history (no dropout), one row each.
  Matrix encode(std::span<const std::vector<ItemIndex>> histories);

  Parameter& item_embeddings() { return item_embeddings_; }
  const Parameter& item_embeddings() const { return item_embeddings_; }
  Parameter& dummy_token() { return dummy_; }
  const Parameter& dummy_token() const { return dummy_; }

  std::vector<Parameter*> parameters();

 private:
  ModelConfig config_;
  Parameter item_embeddings_;  // (V + 1) x d, row V is padding
  Parameter positional_;       // L x d
  Parameter start_;            // 1 x d
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_final_;
  Linear readout_;
  Parameter dummy_;  // 1 x d
};

/// Sinusoidal embedding of (possibly fractional) steps, one row per entry.
Matrix timestep_embedding(std::span<const double> t, int dim);

/// MLP f(x_t, g, t) predicting the clean item embedding.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const ModelConfig& config, Rng& rng);

  Var forward(Tape& tape, Var x_t, Var g, std::span<const double> t, Binding binding);

  /// No-grad evaluation. Throws NumericError on non-finite input.
  Matrix operator()(const Matrix& x_t, const Matrix& g, std::span<const double> t);
  Matrix operator()(const Matrix& x_t, const Matrix& g, double t);

  std::vector<Parameter*> parameters();
  /// Zeroes the output layer so the network maps everything to 0.
  void zero_output_layer();

 private:
  int dim_ = 0;
  Linear time_proj_;
  std::vector<Linear> layers_;
};

struct Model {
  ModelConfig config;
  GuidanceEncoder encoder;
  Denoiser denoiser;

  /// Fan-in scaled Gaussian weights, zero biases, unit-variance embeddings.
  static Model init(const ModelConfig& config, std::uint64_t seed);

  /// Declaration order: encoder first, then denoiser.
  std::vector<Parameter*> parameters();
  std::size_t parameter_count();
};

/// Guidance for a batch with per-example Bernoulli(rho) replacement by the
/// dummy token when `training`; `rho` is ignored otherwise.
Matrix encode_guidance(GuidanceEncoder& encoder, std::span<const std::vector<ItemIndex>> histories,
                       double rho, bool training, Rng& rng);

/// (1 + w) f(x_t, g, t) - w f(x_t, dummy, t). w == 0 returns the conditional
/// branch untouched.
Matrix guided_denoise(const Matrix& x_t, const Matrix& g, double t, GuidanceEncoder& encoder,
                      Denoiser& denoiser, double w);

}  // namespace tarec
