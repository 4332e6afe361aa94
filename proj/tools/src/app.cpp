#include "tarec/cli/app.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "tarec/checkpoint.hpp"
#include "tarec/cli/config.hpp"
#include "tarec/csv.hpp"
#include "tarec/error.hpp"
#include "tarec/eval.hpp"

namespace tarec::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string command;
  std::string config;
  std::string output;
  std::optional<double> lambda_c;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::vector<std::string> sets;
  std::string checkpoint;
  std::string mode;
  std::string probe;
  bool synthetic = false;
};

/// Error tagged with the exit code it maps to.
struct Failure {
  int code;
  std::string message;
};

struct Context {
  ExperimentConfig config;
  std::string hash;
  fs::path root;
  std::ostream& out;
};

std::vector<std::string> header_comments(const Context& ctx, const std::string& command) {
  return {"tarec " + command, "config_hash=" + ctx.hash, "config=" + to_json(ctx.config).dump()};
}

std::string fmt(double v) { return format_double(v); }

int parse_mode(const std::string& mode) {
  if (mode == "one_step") return 1;
  for (const std::string prefix : {"multi_step:", "multi_step(", "multi_step="}) {
    if (mode.rfind(prefix, 0) == 0) {
      std::string n = mode.substr(prefix.size());
      if (!n.empty() && n.back() == ')') n.pop_back();
      try {
        std::size_t used = 0;
        const int steps = std::stoi(n, &used);
        if (used == n.size() && steps >= 1) return steps;
      } catch (const std::exception&) {
      }
    }
  }
  throw ConfigError("mode must be one_step or multi_step:N, got '" + mode + "'");
}

ExperimentConfig resolve_config(const Options& o) {
  std::ifstream in(o.config);
  if (!in) throw Failure{kData, "cannot read config file " + o.config};
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(o.config + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(o.config + ": top level must be an object");
  for (const auto& s : o.sets) apply_override(j, s);
  if (o.lambda_c) apply_override(j, "pretrain.lambda_c=" + format_double(*o.lambda_c));
  if (o.seed) {
    for (const char* key : {"pretrain.seed=", "finetune.seed=", "infer.seed="}) {
      apply_override(j, key + std::to_string(*o.seed));
    }
  }
  if (o.synthetic) apply_override(j, "data.format=\"synthetic\"");
  if (!o.mode.empty()) apply_override(j, "infer.steps=" + std::to_string(parse_mode(o.mode)));
  if (o.steps) apply_override(j, "infer.steps=" + std::to_string(*o.steps));
  return parse_config(j);
}

fs::path prepared_dir(const Context& ctx) { return ctx.root / "prepared"; }

PreparedData load_prepared(const Context& ctx) {
  PreparedData data = read_prepared(prepared_dir(ctx));
  if (data.seq_len != ctx.config.data.L) {
    throw ConfigError("prepared split uses L=" + std::to_string(data.seq_len) + " but config has data.L=" +
                      std::to_string(ctx.config.data.L));
  }
  return data;
}

Model load_checkpoint_checked(const Context& ctx, const fs::path& path, std::size_t num_items) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  const ModelConfig expected = ctx.config.model_config(static_cast<int>(num_items));
  int steps = 0;
  Model model = load_model(path, &expected, &steps);
  if (steps != ctx.config.schedule.T) {
    throw CheckpointError(path.string() + " was trained with T=" + std::to_string(steps) +
                          " but config has schedule.T=" + std::to_string(ctx.config.schedule.T));
  }
  return model;
}

fs::path default_checkpoint(const Context& ctx, const Options& o) {
  if (!o.checkpoint.empty()) return o.checkpoint;
  const fs::path ft = ctx.root / "finetune" / "checkpoint.tarec";
  if (fs::exists(ft)) return ft;
  return ctx.root / "pretrain" / "checkpoint.tarec";
}

int cmd_prepare(Context& ctx) {
  const DataSection& d = ctx.config.data;
  std::vector<Interaction> raw;
  std::string source;
  if (d.format == "synthetic") {
    raw = generate_synthetic(d.synthetic);
    source = "synthetic";
  } else {
    if (d.path.empty()) throw DataError("data.path is empty");
    try {
      raw = ingest_tsv(d.path);
    } catch (const ParseError& e) {
      throw DataError(d.path + ": " + e.what());
    }
    source = d.path;
  }
  FilterResult filtered = filter_and_build(raw, d.min_item_count, d.min_seq_len);
  std::vector<SequenceExample> examples;
  for (const UserHistory& h : filtered.histories) {
    auto w = window_and_pad(h, d.L, d.min_seq_len, filtered.corpus.pad_index());
    examples.insert(examples.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  PreparedData data;
  data.corpus = std::move(filtered.corpus);
  data.split = chronological_split(std::move(examples));
  data.seq_len = d.L;
  const json extra = {{"config_hash", ctx.hash},
                      {"source", source},
                      {"raw_interactions", raw.size()},
                      {"users", filtered.histories.size()}};
  fs::create_directories(prepared_dir(ctx));
  write_prepared(prepared_dir(ctx), data, d.min_item_count, d.min_seq_len, extra.dump());
  ctx.out << "prepared " << data.corpus.size() << " items, " << data.split.train.size() << "/"
          << data.split.valid.size() << "/" << data.split.test.size()
          << " train/valid/test examples in " << prepared_dir(ctx).string() << "\n";
  return kOk;
}

int cmd_pretrain(Context& ctx) {
  const PreparedData data = load_prepared(ctx);
  const NoiseSchedule sched = ctx.config.noise_schedule();
  const ModelConfig mc = ctx.config.model_config(static_cast<int>(data.corpus.size()));
  const fs::path dir = ctx.root / "pretrain";
  fs::create_directories(dir);
  CsvWriter log(dir / "log.csv",
                {"epoch", "loss_diff", "loss_tcr", "loss_pre", "valid_hr20", "valid_ndcg20", "wall_seconds"},
                header_comments(ctx, "pretrain"));
  const PretrainResult result = run_pretraining(
      data.split, data.corpus, Model::init(mc, ctx.config.pretrain.seed), sched, ctx.config.pretrain,
      [&](const PretrainEpoch& e) {
        log.row({std::to_string(e.epoch), fmt(e.loss_diff), fmt(e.loss_tcr), fmt(e.loss_pre),
                 fmt(e.valid_hr), fmt(e.valid_ndcg), fmt(e.wall_seconds)});
        log.flush();
      });
  Model model = result.model;
  write_checkpoint(dir / "checkpoint.tarec", model, sched.steps(), "pretrain");
  ctx.out << "pretrained " << result.log.size() << " epochs, best epoch " << result.best_epoch
          << ", checkpoint " << (dir / "checkpoint.tarec").string() << "\n";
  return kOk;
}

int cmd_finetune(Context& ctx, const Options& o) {
  const PreparedData data = load_prepared(ctx);
  const NoiseSchedule sched = ctx.config.noise_schedule();
  const fs::path input = o.checkpoint.empty() ? ctx.root / "pretrain" / "checkpoint.tarec" : fs::path(o.checkpoint);
  Model pretrained = load_checkpoint_checked(ctx, input, data.corpus.size());
  const fs::path dir = ctx.root / "finetune";
  fs::create_directories(dir);
  CsvWriter log(dir / "log.csv",
                {"epoch", "loss_apa", "mean_lambda_beta", "valid_hr20", "valid_ndcg20", "wall_seconds"},
                header_comments(ctx, "finetune"));
  const FinetuneResult result = run_finetuning(
      data.split, data.corpus, std::move(pretrained), sched, ctx.config.finetune, [&](const FinetuneEpoch& e) {
        log.row({std::to_string(e.epoch), fmt(e.loss_apa), fmt(e.mean_lambda_beta), fmt(e.valid_hr),
                 fmt(e.valid_ndcg), fmt(e.wall_seconds)});
        log.flush();
      });
  Model model = result.model;
  write_checkpoint(dir / "checkpoint.tarec", model, sched.steps(), "finetune");
  ctx.out << "fine-tuned " << result.log.size() << " epochs, best epoch " << result.best_epoch
          << ", checkpoint " << (dir / "checkpoint.tarec").string() << "\n";
  return kOk;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += sep;
    s += parts[i];
  }
  return s;
}

int cmd_eval(Context& ctx, const Options& o) {
  const PreparedData data = load_prepared(ctx);
  const NoiseSchedule sched = ctx.config.noise_schedule();
  const fs::path ckpt = default_checkpoint(ctx, o);
  Model model = load_checkpoint_checked(ctx, ckpt, data.corpus.size());
  const std::string stage = read_checkpoint(ckpt).stage;

  InferenceOptions opt = ctx.config.infer;
  opt.K = ctx.config.eval.k;
  if (opt.steps > sched.steps()) {
    throw Failure{kEval, "infer.steps=" + std::to_string(opt.steps) + " exceeds T=" + std::to_string(sched.steps())};
  }
  const std::size_t V = data.corpus.size();
  if (static_cast<std::size_t>(opt.K) > V) {
    throw Failure{kEval, "K=" + std::to_string(opt.K) + " exceeds the corpus size V=" + std::to_string(V)};
  }
  if (data.split.test.empty()) throw DataError("test split is empty");
  std::vector<RankingResult> rankings;
  const MetricReport rep = evaluate(model, data.split.test, sched, opt, &rankings);

  const fs::path dir = ctx.root / "eval";
  fs::create_directories(dir);
  const std::string tag = ctx.hash + "_s" + std::to_string(opt.seed);
  const std::string mode = opt.steps == 1 ? "one_step" : "multi_step(" + std::to_string(opt.steps) + ")";
  const auto comments = header_comments(ctx, "eval");
  {
    CsvWriter m(dir / ("metrics_" + tag + ".csv"),
                {"config_hash", "seed", "stage", "mode", "steps", "k", "n_users", "hr", "ndcg", "coverage"},
                comments);
    m.row({ctx.hash, std::to_string(opt.seed), stage, mode, std::to_string(opt.steps), std::to_string(rep.k),
           std::to_string(rep.n_users), fmt(rep.hr_at_k), fmt(rep.ndcg_at_k), fmt(rep.coverage_at_k)});
  }
  {
    CsvWriter inf(dir / ("inference_" + tag + ".csv"),
                  {"user_ordinal", "user", "steps", "generation_seconds", "items", "scores"}, comments);
    for (std::size_t i = 0; i < rankings.size(); ++i) {
      std::vector<std::string> items, scores;
      for (const auto& [item, score] : rankings[i].top_k) {
        items.push_back(data.corpus.id_of(item));
        scores.push_back(fmt(score));
      }
      inf.row({std::to_string(i), data.split.test[i].user, std::to_string(opt.steps), fmt(rankings[i].elapsed),
               join(items, ' '), join(scores, ' ')});
    }
  }
  {
    CsvWriter t(dir / ("timing_" + tag + ".csv"), {"phase", "seconds"}, comments);
    for (const auto& [phase, secs] : rep.timings) t.row({phase, fmt(secs)});
  }
  {
    CsvWriter p(dir / ("plot_" + tag + ".csv"), {"x_steps", "hr", "ndcg", "coverage"}, comments);
    p.row({std::to_string(opt.steps), fmt(rep.hr_at_k), fmt(rep.ndcg_at_k), fmt(rep.coverage_at_k)});
  }
  ctx.out << mode << " HR@" << rep.k << "=" << fmt(rep.hr_at_k) << " NDCG@" << rep.k << "=" << fmt(rep.ndcg_at_k)
          << " coverage@" << rep.k << "=" << fmt(rep.coverage_at_k) << " over " << rep.n_users << " users\n";
  return kOk;
}

/// Histories of the first `n` test examples (cycling when fewer).
std::vector<std::vector<ItemIndex>> sample_histories(const DatasetSplit& split, int n) {
  if (split.test.empty()) throw ContractViolation("probe needs a non-empty test split");
  std::vector<std::vector<ItemIndex>> out;
  for (int i = 0; i < n; ++i) out.push_back(split.test[static_cast<std::size_t>(i) % split.test.size()].history);
  return out;
}

int cmd_probe(Context& ctx, const Options& o) {
  const EvalSection& ev = ctx.config.eval;
  const fs::path dir = ctx.root / "probe";
  fs::create_directories(dir);
  const std::uint64_t seed = ctx.config.infer.seed;
  const std::string tag = ctx.hash + "_s" + std::to_string(seed);
  const auto comments = header_comments(ctx, "probe " + o.probe);
  const auto file = [&](const std::string& name) { return dir / ("probe_" + name + "_" + tag + ".csv"); };

  if (o.probe == "dpo_grad") {
    const auto rows = dpo_gradient_probe(ev.dpo_delta_r, ev.dpo_lambda_step, 1e-9, ev.dpo_lambda_max);
    CsvWriter w(file("dpo_grad"), {"delta_r", "lambda", "h", "in_hypothesis", "row_verdict"}, comments);
    std::size_t non_decreasing = 0;
    bool violated = false;
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.lambdas.size(); ++i) {
        const bool inside = r.lambdas[i] * r.delta_r <= 1.0 + 1e-12;
        w.row({fmt(r.delta_r), fmt(r.lambdas[i]), fmt(r.h[i]), inside ? "1" : "0", to_string(r.verdict)});
      }
      non_decreasing += r.verdict == ProbeVerdict::NonDecreasing;
      violated = violated || r.verdict == ProbeVerdict::Violated;
    }
    if (non_decreasing == rows.size()) {
      ctx.out << "verdict: all rows non-decreasing (" << rows.size() << " rows)\n";
    } else if (!violated) {
      ctx.out << "verdict: " << non_decreasing << "/" << rows.size()
              << " rows non-decreasing, the rest decrease only outside-hypothesis\n";
    } else {
      ctx.out << "verdict: violated inside the hypothesis region\n";
    }
    return kOk;
  }

  const PreparedData data = load_prepared(ctx);
  const NoiseSchedule sched = ctx.config.noise_schedule();
  Model model = load_checkpoint_checked(ctx, default_checkpoint(ctx, o), data.corpus.size());
  const auto dim = static_cast<std::size_t>(model.config.dim);

  if (o.probe == "consistency") {
    Rng rng = make_rng(seed, "probe.consistency");
    const double gap = consistency_gap(model, data.split.test, sched, ev.gap_probes, rng);
    CsvWriter w(file("consistency"), {"n_probes", "consistency_gap"}, comments);
    w.row({std::to_string(ev.gap_probes), fmt(gap)});
    ctx.out << "verdict: consistency_gap=" << fmt(gap) << " over " << ev.gap_probes << " probes\n";
    return kOk;
  }
  if (o.probe == "deviation") {
    if (ev.deviation_steps > sched.steps()) throw ContractViolation("eval.deviation_steps exceeds T");
    const Matrix g = model.encoder.encode(sample_histories(data.split, ev.probe_samples));
    Rng rng = make_rng(seed, "probe.deviation");
    const Matrix x_T = gaussian(g.rows(), dim, rng);
    const DeviationReport rep = one_step_deviation(bind_denoiser(model, g, ctx.config.model.w), sched,
                                                   ev.deviation_steps, x_T);
    CsvWriter w(file("deviation"), {"sample", "deviation", "chained_bound", "bound_holds"}, comments);
    std::size_t holds = 0;
    for (std::size_t i = 0; i < rep.deviation.size(); ++i) {
      const bool ok = rep.deviation[i] <= rep.chained_bound[i] + 1e-9;
      holds += ok;
      w.row({std::to_string(i), fmt(rep.deviation[i]), fmt(rep.chained_bound[i]), ok ? "1" : "0"});
    }
    ctx.out << "verdict: mean one_step_deviation=" << fmt(rep.mean) << ", chained bound holds for " << holds
            << "/" << rep.deviation.size() << " samples\n";
    return kOk;
  }
  if (o.probe == "trend") {
    const Matrix g = model.encoder.encode(sample_histories(data.split, ev.probe_samples));
    Rng rng = make_rng(seed, "probe.trend");
    const Matrix x_T = gaussian(g.rows(), dim, rng);
    const auto points = discretization_trend(bind_denoiser(model, g, ctx.config.model.w), sched, ev.trend_steps, x_T);
    CsvWriter w(file("trend"), {"steps", "mean_deviation"}, comments);
    std::vector<double> xs, ys;
    for (const auto& p : points) {
      w.row({std::to_string(p.steps), fmt(p.mean_deviation)});
      xs.push_back(p.steps);
      ys.push_back(p.mean_deviation);
    }
    const double rho = points.size() >= 2 ? spearman(xs, ys) : 0.0;
    ctx.out << "verdict: " << (rho <= -0.8 ? "monotone" : "not monotone") << " (spearman=" << fmt(rho) << ")\n";
    return kOk;
  }
  if (o.probe == "timing") {
    if (ev.timing_steps > sched.steps()) {
      throw ContractViolation("eval.timing_steps=" + std::to_string(ev.timing_steps) + " exceeds T=" +
                              std::to_string(sched.steps()));
    }
    const Matrix g = model.encoder.encode(sample_histories(data.split, ev.timing_users));
    const std::vector<TimingMode> modes{{true, 1}, {false, ev.timing_steps}};
    const auto rows = timing_harness(model, g, sched, modes, ev.repeats, seed);
    CsvWriter w(file("timing"),
                {"mode", "steps", "median_seconds", "denoiser_calls", "repeats", "single_sample", "speedup",
                 "call_ratio"},
                comments);
    for (const auto& r : rows) {
      w.row({r.mode.name(), std::to_string(r.mode.one_step ? 1 : r.mode.steps), fmt(r.median_seconds),
             std::to_string(r.denoiser_calls), std::to_string(r.repeats), r.single_sample ? "1" : "0",
             fmt(r.speedup), fmt(r.call_ratio)});
    }
    ctx.out << "verdict: speedup=" << fmt(rows.back().speedup) << " call_ratio=" << fmt(rows.back().call_ratio)
            << "\n";
    return kOk;
  }
  throw Failure{kUsage, "unknown probe '" + o.probe + "' (consistency, deviation, trend, dpo_grad, timing)"};
}

int stage_code(const std::string& command) {
  if (command == "prepare") return kData;
  if (command == "pretrain" || command == "finetune") return kTraining;
  if (command == "eval") return kEval;
  return kProbe;
}

int dispatch(const Options& o, std::ostream& out) {
  ExperimentConfig config = resolve_config(o);
  fs::path root = "tarec-out";
  if (const char* env = std::getenv(kOutputEnv); env != nullptr && *env != '\0') root = env;
  if (!o.output.empty()) root = o.output;
  Context ctx{std::move(config), "", root, out};
  ctx.hash = config_hash(ctx.config);
  fs::create_directories(root);
  try {
    if (o.command == "prepare") return cmd_prepare(ctx);
    if (o.command == "pretrain") return cmd_pretrain(ctx);
    if (o.command == "finetune") return cmd_finetune(ctx, o);
    if (o.command == "eval") return cmd_eval(ctx, o);
    return cmd_probe(ctx, o);
  } catch (const Failure&) {
    throw;
  } catch (const DataError& e) {
    throw Failure{kData, e.what()};
  } catch (const ParseError& e) {
    throw Failure{kData, e.what()};
  } catch (const DivergenceError& e) {
    throw Failure{kTraining, e.what()};
  } catch (const CheckpointError& e) {
    throw Failure{kCheckpoint, e.what()};
  } catch (const ConfigError& e) {
    throw Failure{o.command == "probe" ? kProbe : kUsage, e.what()};
  } catch (const std::exception& e) {
    throw Failure{stage_code(o.command), e.what()};
  }
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "Experiment config (JSON)")->required();
  sub->add_option("--output", o.output, std::string("Output root (default $") + kOutputEnv + " or ./tarec-out)");
  sub->add_option("--set", o.sets, "Override a config value: section.key=value")->take_all();
  sub->add_option("--seed", o.seed, "Seed for every stage");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage diffusion sequential recommender", "tarec"};
  app.require_subcommand(1, 1);
  Options o;

  CLI::App* prepare = app.add_subcommand("prepare", "Filter, window and split interactions");
  add_common(prepare, o);
  prepare->add_flag("--synthetic", o.synthetic, "Use the built-in synthetic corpus");

  CLI::App* pretrain = app.add_subcommand("pretrain", "Stage-one training");
  add_common(pretrain, o);
  pretrain->add_option("--lambda-c", o.lambda_c, "Temporal consistency weight");

  CLI::App* finetune = app.add_subcommand("finetune", "Stage-two preference alignment");
  add_common(finetune, o);
  finetune->add_option("--checkpoint", o.checkpoint, "Pretrained checkpoint");

  CLI::App* eval = app.add_subcommand("eval", "Ranking metrics on the test split");
  add_common(eval, o);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate");
  eval->add_option("--mode", o.mode, "one_step or multi_step:N");
  eval->add_option("--steps", o.steps, "Reverse steps (1 = one-step)");

  CLI::App* probe = app.add_subcommand("probe", "Diagnostics");
  add_common(probe, o);
  probe->add_option("--probe", o.probe, "consistency | deviation | trend | dpo_grad | timing")->required();
  probe->add_option("--checkpoint", o.checkpoint, "Checkpoint to probe");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "tarec: " << e.what() << "\n" << app.help();
    return kUsage;
  }
  o.command = app.get_subcommands().front()->get_name();

  try {
    return dispatch(o, out);
  } catch (const Failure& f) {
    err << "tarec " << o.command << ": " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    err << "tarec " << o.command << ": " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace tarec::cli
