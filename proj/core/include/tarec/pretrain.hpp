#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tarec/autodiff.hpp"
#include "tarec/corpus.hpp"
#include "tarec/nets.hpp"
#include "tarec/rng.hpp"
#include "tarec/schedule.hpp"

namespace tarec {

/// x0 predictor recorded on a tape: (x_t, g, per-row steps) -> x0_hat.
using TapeDenoiser = std::function<Var(Var x_t, Var g, std::span<const double> t)>;

/// Per-row step t in [1, T] and standard Gaussian z.
struct NoiseDraws {
  std::vector<int> t;
  Matrix z;
};

NoiseDraws draw_noise(std::size_t rows, std::size_t dim, const NoiseSchedule& sched, Rng& rng);

/// sqrt(ab) x + sqrt(1 - ab) z at step t_r + offset for each row r, with the
/// gradient path back to x intact.
Var diffuse(Var x, const NoiseDraws& draws, const NoiseSchedule& sched, int offset = 0);

/// mean_r ||f(x_t, g, t) - x||^2
Var loss_diff(Var x, Var g, const NoiseDraws& draws, const NoiseSchedule& sched,
              const TapeDenoiser& f);

/// mean_r ||f(x_t, g, t) - f(x_{t-1}, g, t-1)||^2. With `stop_prev_grad` the
/// (t-1) branch is treated as a constant.
Var loss_tcr(Var x, Var g, const NoiseDraws& draws, const NoiseSchedule& sched,
             const TapeDenoiser& f, bool stop_prev_grad = false);

struct PretrainLoss {
  Var diff;
  Var tcr;
  Var total;
};

/// loss_diff + lambda_c * loss_tcr from one set of draws, sharing the f(x_t)
/// evaluation between both terms.
PretrainLoss loss_pre(Var x, Var g, const NoiseDraws& draws, const NoiseSchedule& sched,
                      const TapeDenoiser& f, double lambda_c, bool stop_prev_grad = false);

struct PretrainConfig {
  double lambda_c = 0.5;
  int epochs = 100;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double rho = 0.1;
  std::uint64_t seed = 0;
  int patience = 20;
  int eval_k = 20;
  bool stop_prev_grad = false;
  // Lets the reconstruction target pull on the item embeddings. Off by default:
  // the target branch alone drives the table to a single point.
  bool target_grad = false;

  void validate() const;
};

struct PretrainEpoch {
  int epoch = 0;  // 1-based
  double loss_diff = 0.0;
  double loss_tcr = 0.0;
  double loss_pre = 0.0;
  double valid_hr = 0.0;
  double valid_ndcg = 0.0;
  double wall_seconds = 0.0;
};

struct PretrainResult {
  Model model;  // best-validation parameters
  std::vector<PretrainEpoch> log;
  int best_epoch = 0;  // 0 when no epoch ran
};

/// Trains encoder, item embeddings and denoiser jointly on `split.train`,
/// selecting the epoch with the best validation HR@k (one-step generation).
/// Throws DivergenceError on a non-finite loss.
PretrainResult run_pretraining(const DatasetSplit& split, const ItemCorpus& corpus, Model model,
                               const NoiseSchedule& sched, const PretrainConfig& config,
                               const std::function<void(const PretrainEpoch&)>& on_epoch = {});

/// Tape denoiser backed by `model.denoiser`.
TapeDenoiser tape_denoiser(Tape& tape, Denoiser& denoiser, Binding binding);

/// Copies every parameter value of `model`.
std::vector<Matrix> snapshot(Model& model);
void restore(Model& model, const std::vector<Matrix>& values);

}  // namespace tarec
