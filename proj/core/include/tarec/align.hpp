#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tarec/corpus.hpp"
#include "tarec/eval.hpp"
#include "tarec/nets.hpp"
#include "tarec/pretrain.hpp"
#include "tarec/rng.hpp"
#include "tarec/schedule.hpp"

namespace tarec {

enum class NegativeStrategy { RandomBatch, Popularity, HardCosine };

NegativeStrategy parse_strategy(const std::string& name);
std::string to_string(NegativeStrategy s);

/// Draws one negative for `example`. Items in its history and its target are
/// excluded; if that leaves no candidate the draw falls back to the whole
/// corpus minus the target. `batch_targets` feeds RandomBatch; `embeddings`
/// (at least V rows) feeds HardCosine, which takes the argmax cosine to the
/// target over `hard_candidates` uniform draws.
ItemIndex sample_negative(const SequenceExample& example, std::span<const ItemIndex> batch_targets,
                          const ItemCorpus& corpus, const Matrix& embeddings,
                          NegativeStrategy strategy, Rng& rng, int hard_candidates = 100);

/// lambda_base * ((1 - t/T) + (1 - d))
double adaptive_lambda(int t, double d, int T, double lambda_base);

struct PreferencePair {
  ItemIndex positive = 0;
  ItemIndex negative = 0;
  double d = 0.0;  // cosine of the two embeddings
};

/// A batch of pairs with their guidance rows and shared (t, z) draws.
struct PreferenceBatch {
  std::vector<PreferencePair> pairs;
  Matrix g;
  Matrix x_pos;
  Matrix x_neg;
  NoiseDraws draws;
};

/// Fills x_pos, x_neg and every pair's d from `embeddings`.
void attach_embeddings(PreferenceBatch& batch, const Matrix& embeddings);

/// Frozen reference predictor.
using RefDenoiser = BatchDenoiser;

/// mean_r softplus(lambda_r * bracket_r), i.e. -log sigmoid(-lambda_r * bracket_r),
/// with bracket = (err_theta+ - err_ref+) - (err_theta- - err_ref-). Throws
/// NumericError naming the pair when a bracket is non-finite.
Var preference_loss(Tape& tape, const NoiseSchedule& sched, const PreferenceBatch& batch,
                    std::span<const double> lambdas, const TapeDenoiser& theta,
                    const RefDenoiser& ref);

/// Per-pair lambda from adaptive_lambda(t, d, T, lambda_base).
Var loss_apa(Tape& tape, const NoiseSchedule& sched, const PreferenceBatch& batch,
             double lambda_base, const TapeDenoiser& theta, const RefDenoiser& ref);

/// Same shape with one fixed lambda for every pair.
Var loss_diffusion_dpo(Tape& tape, const NoiseSchedule& sched, const PreferenceBatch& batch,
                       double lambda_beta, const TapeDenoiser& theta, const RefDenoiser& ref);

std::vector<double> adaptive_lambdas(const NoiseSchedule& sched, const PreferenceBatch& batch,
                                     double lambda_base);

struct AlignConfig {
  double lambda_base = 0.5;
  NegativeStrategy strategy = NegativeStrategy::RandomBatch;
  bool adaptive = true;  // false: fixed lambda = lambda_base
  int epochs = 20;
  int batch_size = 256;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int patience = 20;
  int eval_k = 20;

  void validate() const;
};

struct FinetuneEpoch {
  int epoch = 0;
  double loss_apa = 0.0;
  double mean_lambda_beta = 0.0;
  double valid_hr = 0.0;
  double valid_ndcg = 0.0;
  double wall_seconds = 0.0;
};

struct FinetuneResult {
  Model model;  // pretrained encoder untouched, best-validation denoiser
  std::vector<FinetuneEpoch> log;
  int best_epoch = 0;
};

/// Aligns the denoiser of `pretrained` against a frozen copy of itself.
/// Encoder and item embeddings never change.
FinetuneResult run_finetuning(const DatasetSplit& split, const ItemCorpus& corpus, Model pretrained,
                              const NoiseSchedule& sched, const AlignConfig& config,
                              const std::function<void(const FinetuneEpoch&)>& on_epoch = {});

}  // namespace tarec
