#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tarec/align.hpp"
#include "tarec/generate.hpp"
#include "tarec/nets.hpp"
#include "tarec/pretrain.hpp"
#include "tarec/synthetic.hpp"

namespace tarec::cli {

struct DataSection {
  std::string path;
  std::string format = "tsv";  // tsv | synthetic
  int L = 10;
  int min_item_count = 5;
  int min_seq_len = 3;
  SyntheticSpec synthetic;
};

struct ModelSection {
  int d = 64;
  int encoder_layers = 1;
  int encoder_heads = 2;
  int ff_mult = 4;
  int denoiser_layers = 3;
  int denoiser_hidden_mult = 4;
  double rho = 0.1;
  double w = 0.0;
};

struct ScheduleSection {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct EvalSection {
  int k = 20;
  int repeats = 5;
  int timing_steps = 1000;
  int timing_users = 64;
  int probe_samples = 256;
  int gap_probes = 1000;
  int deviation_steps = 50;
  std::vector<int> trend_steps{5, 10, 50, 100, 500};
  std::vector<double> dpo_delta_r{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  double dpo_lambda_step = 0.05;
  double dpo_lambda_max = 0.0;  // 0: up to 1 / delta_r
};

struct ExperimentConfig {
  DataSection data;
  ModelSection model;
  ScheduleSection schedule;
  PretrainConfig pretrain;
  AlignConfig finetune;
  InferenceOptions infer;
  EvalSection eval;

  ModelConfig model_config(int num_items) const;
  NoiseSchedule noise_schedule() const;
};

/// Builds a config from JSON. Every key must be known; missing keys keep
/// their defaults. Throws ConfigError naming the offending key.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Effective config with every field spelled out, keys sorted.
nlohmann::json to_json(const ExperimentConfig& c);

/// Sets `dotted.key.path` in `j` to `value`, parsed as JSON when possible and
/// as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// 16 hex digits of FNV-1a over the compact effective config.
std::string config_hash(const ExperimentConfig& c);

}  // namespace tarec::cli
