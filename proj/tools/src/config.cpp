#include "tarec/cli/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "tarec/error.hpp"
#include "tarec/rng.hpp"

namespace tarec::cli {

using nlohmann::json;

ModelConfig ExperimentConfig::model_config(int num_items) const {
  ModelConfig m;
  m.num_items = num_items;
  m.dim = model.d;
  m.seq_len = data.L;
  m.encoder_layers = model.encoder_layers;
  m.encoder_heads = model.encoder_heads;
  m.ff_mult = model.ff_mult;
  m.denoiser_layers = model.denoiser_layers;
  m.denoiser_hidden_mult = model.denoiser_hidden_mult;
  return m;
}

NoiseSchedule ExperimentConfig::noise_schedule() const {
  return NoiseSchedule::linear(schedule.T, schedule.beta_start, schedule.beta_end);
}

namespace {

/// Reads keys out of one JSON object and rejects leftovers.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("'" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("'" + path(key) + "' has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + path(k) + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

template <typename T>
void require(bool ok, const std::string& what) {
  if (!ok) throw T(what);
}

void validate(const ExperimentConfig& c) {
  const auto check = [](bool ok, const std::string& what) { require<ConfigError>(ok, what); };
  check(c.data.format == "tsv" || c.data.format == "synthetic", "data.format must be tsv or synthetic");
  check(c.data.L >= 1, "data.L must be >= 1");
  check(c.data.min_item_count >= 1, "data.min_item_count must be >= 1");
  check(c.data.min_seq_len >= 2, "data.min_seq_len must be >= 2");
  const SyntheticSpec& s = c.data.synthetic;
  check(s.users >= 1 && s.items >= 2 && s.clusters >= 1 && s.successors >= 1 && s.min_len >= 1 &&
            s.max_len >= s.min_len && s.noise >= 0.0 && s.noise <= 1.0,
        "data.synthetic is invalid");
  check(c.model.d >= 2 && c.model.d % 2 == 0, "model.d must be an even number >= 2");
  check(c.model.encoder_heads >= 1 && c.model.d % c.model.encoder_heads == 0,
        "model.encoder_heads must divide model.d");
  check(c.model.encoder_layers >= 0, "model.encoder_layers must be >= 0");
  check(c.model.ff_mult >= 1, "model.ff_mult must be >= 1");
  check(c.model.denoiser_layers >= 1, "model.denoiser_layers must be >= 1");
  check(c.model.denoiser_hidden_mult >= 1, "model.denoiser_hidden_mult must be >= 1");
  check(c.model.rho >= 0.0 && c.model.rho <= 1.0, "model.rho must lie in [0, 1]");
  check(c.model.w >= 0.0, "model.w must be >= 0");
  check(c.schedule.T >= 1, "schedule.T must be >= 1");
  c.pretrain.validate();
  c.finetune.validate();
  check(c.infer.steps >= 1, "infer.steps must be >= 1");
  check(c.infer.K >= 1, "infer.K must be >= 1");
  check(c.eval.k >= 1, "eval.k must be >= 1");
  check(c.eval.repeats >= 1, "eval.repeats must be >= 1");
  check(c.eval.timing_steps >= 1, "eval.timing_steps must be >= 1");
  check(c.eval.timing_users >= 1, "eval.timing_users must be >= 1");
  check(c.eval.probe_samples >= 1, "eval.probe_samples must be >= 1");
  check(c.eval.gap_probes >= 1, "eval.gap_probes must be >= 1");
  check(c.eval.deviation_steps >= 1, "eval.deviation_steps must be >= 1");
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  if (const json* d = root.child("data")) {
    Section s(*d, "data");
    s.get("path", c.data.path);
    s.get("format", c.data.format);
    s.get("L", c.data.L);
    s.get("min_item_count", c.data.min_item_count);
    s.get("min_seq_len", c.data.min_seq_len);
    if (const json* sy = s.child("synthetic")) {
      Section y(*sy, "data.synthetic");
      SyntheticSpec& sp = c.data.synthetic;
      y.get("users", sp.users);
      y.get("items", sp.items);
      y.get("clusters", sp.clusters);
      y.get("successors", sp.successors);
      y.get("min_len", sp.min_len);
      y.get("max_len", sp.max_len);
      y.get("noise", sp.noise);
      y.get("seed", sp.seed);
      y.finish();
    }
    s.finish();
  }
  if (const json* m = root.child("model")) {
    Section s(*m, "model");
    s.get("d", c.model.d);
    s.get("encoder_layers", c.model.encoder_layers);
    s.get("encoder_heads", c.model.encoder_heads);
    s.get("ff_mult", c.model.ff_mult);
    s.get("denoiser_layers", c.model.denoiser_layers);
    s.get("denoiser_hidden_mult", c.model.denoiser_hidden_mult);
    s.get("rho", c.model.rho);
    s.get("w", c.model.w);
    s.finish();
  }
  if (const json* m = root.child("schedule")) {
    Section s(*m, "schedule");
    s.get("T", c.schedule.T);
    s.get("beta_start", c.schedule.beta_start);
    s.get("beta_end", c.schedule.beta_end);
    s.finish();
  }
  if (const json* m = root.child("pretrain")) {
    Section s(*m, "pretrain");
    PretrainConfig& p = c.pretrain;
    s.get("lambda_c", p.lambda_c);
    s.get("epochs", p.epochs);
    s.get("lr", p.learning_rate);
    s.get("batch", p.batch_size);
    s.get("seed", p.seed);
    s.get("beta1", p.beta1);
    s.get("beta2", p.beta2);
    s.get("adam_eps", p.adam_eps);
    s.get("patience", p.patience);
    s.get("stop_prev_grad", p.stop_prev_grad);
    s.get("target_grad", p.target_grad);
    s.finish();
  }
  if (const json* m = root.child("finetune")) {
    Section s(*m, "finetune");
    AlignConfig& a = c.finetune;
    std::string strategy = to_string(a.strategy);
    s.get("lambda_base", a.lambda_base);
    s.get("strategy", strategy);
    s.get("adaptive", a.adaptive);
    s.get("epochs", a.epochs);
    s.get("lr", a.learning_rate);
    s.get("batch", a.batch_size);
    s.get("seed", a.seed);
    s.get("beta1", a.beta1);
    s.get("beta2", a.beta2);
    s.get("adam_eps", a.adam_eps);
    s.get("patience", a.patience);
    s.finish();
    a.strategy = parse_strategy(strategy);
  }
  if (const json* m = root.child("infer")) {
    Section s(*m, "infer");
    s.get("steps", c.infer.steps);
    s.get("K", c.infer.K);
    s.get("seed", c.infer.seed);
    s.get("deterministic", c.infer.deterministic);
    s.get("exclude_history", c.infer.exclude_history);
    s.finish();
  }
  if (const json* m = root.child("eval")) {
    Section s(*m, "eval");
    EvalSection& e = c.eval;
    s.get("k", e.k);
    s.get("repeats", e.repeats);
    s.get("timing_steps", e.timing_steps);
    s.get("timing_users", e.timing_users);
    s.get("probe_samples", e.probe_samples);
    s.get("gap_probes", e.gap_probes);
    s.get("deviation_steps", e.deviation_steps);
    s.get("trend_steps", e.trend_steps);
    s.get("dpo_delta_r", e.dpo_delta_r);
    s.get("dpo_lambda_step", e.dpo_lambda_step);
    s.get("dpo_lambda_max", e.dpo_lambda_max);
    s.finish();
  }
  root.finish();
  c.pretrain.rho = c.model.rho;
  c.pretrain.eval_k = c.eval.k;
  c.finetune.eval_k = c.eval.k;
  c.infer.w = c.model.w;
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  const SyntheticSpec& sp = c.data.synthetic;
  const PretrainConfig& p = c.pretrain;
  const AlignConfig& a = c.finetune;
  const EvalSection& e = c.eval;
  return json{
      {"data",
       {{"path", c.data.path},
        {"format", c.data.format},
        {"L", c.data.L},
        {"min_item_count", c.data.min_item_count},
        {"min_seq_len", c.data.min_seq_len},
        {"synthetic",
         {{"users", sp.users},
          {"items", sp.items},
          {"clusters", sp.clusters},
          {"successors", sp.successors},
          {"min_len", sp.min_len},
          {"max_len", sp.max_len},
          {"noise", sp.noise},
          {"seed", sp.seed}}}}},
      {"model",
       {{"d", c.model.d},
        {"encoder_layers", c.model.encoder_layers},
        {"encoder_heads", c.model.encoder_heads},
        {"ff_mult", c.model.ff_mult},
        {"denoiser_layers", c.model.denoiser_layers},
        {"denoiser_hidden_mult", c.model.denoiser_hidden_mult},
        {"rho", c.model.rho},
        {"w", c.model.w}}},
      {"schedule", {{"T", c.schedule.T}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
      {"pretrain",
       {{"lambda_c", p.lambda_c},
        {"epochs", p.epochs},
        {"lr", p.learning_rate},
        {"batch", p.batch_size},
        {"seed", p.seed},
        {"beta1", p.beta1},
        {"beta2", p.beta2},
        {"adam_eps", p.adam_eps},
        {"patience", p.patience},
        {"stop_prev_grad", p.stop_prev_grad},
        {"target_grad", p.target_grad}}},
      {"finetune",
       {{"lambda_base", a.lambda_base},
        {"strategy", to_string(a.strategy)},
        {"adaptive", a.adaptive},
        {"epochs", a.epochs},
        {"lr", a.learning_rate},
        {"batch", a.batch_size},
        {"seed", a.seed},
        {"beta1", a.beta1},
        {"beta2", a.beta2},
        {"adam_eps", a.adam_eps},
        {"patience", a.patience}}},
      {"infer",
       {{"steps", c.infer.steps},
        {"K", c.infer.K},
        {"seed", c.infer.seed},
        {"deterministic", c.infer.deterministic},
        {"exclude_history", c.infer.exclude_history}}},
      {"eval",
       {{"k", e.k},
        {"repeats", e.repeats},
        {"timing_steps", e.timing_steps},
        {"timing_users", e.timing_users},
        {"probe_samples", e.probe_samples},
        {"gap_probes", e.gap_probes},
        {"deviation_steps", e.deviation_steps},
        {"trend_steps", e.trend_steps},
        {"dpo_delta_r", e.dpo_delta_r},
        {"dpo_lambda_step", e.dpo_lambda_step},
        {"dpo_lambda_max", e.dpo_lambda_max}}}};
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed override key '" + key + "'");
    if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
  return buf;
}

}  // namespace tarec::cli
