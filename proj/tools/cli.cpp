// tvla: command-line driver for collection, training, evaluation and reports.
//
// Settings come from built-in defaults, then --config, then flags.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "tvla/errors.hpp"
#include "tvla/harness.hpp"

namespace fs = std::filesystem;
using namespace tvla;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out = "out";
};

void print_log(const std::string& s) { std::cerr << s << "\n"; }

PolicyConfig policy_config(const Config& c, Variant v) {
  PolicyConfig p;
  p.variant = v;
  p.vision.embed_dim = c.count("policy.vision_dim");
  p.vision.blocks = c.count("policy.vision_blocks");
  p.vision.heads = c.count("policy.vision_heads");
  p.d_lm = c.count("policy.d_lm");
  p.lm_blocks = c.count("policy.lm_blocks");
  p.lm_heads = c.count("policy.lm_heads");
  return p;
}

TrainConfig train_config(const Config& c, const std::string& prefix, const fs::path& dir) {
  TrainConfig t;
  t.steps = c.count(prefix + ".steps");
  t.lr = c.num(prefix + ".lr");
  t.batch = c.count("train.batch");
  t.warmup = c.count("train.warmup");
  t.clip = c.num("train.clip");
  t.log_every = c.count("train.log_every");
  t.ckpt_every = c.count("train.ckpt_every");
  t.seed = c.u64("seed");
  t.ckpt_dir = dir;
  return t;
}

LoraConfig lora_config(const Config& c) {
  LoraConfig l;
  l.rank = c.count("lora.rank");
  l.alpha = c.num("lora.alpha");
  return l;
}

ProbeEvalConfig probe_config(const Config& c) {
  ProbeEvalConfig p;
  p.hidden = c.count("probe.hidden");
  p.steps = c.count("probe.steps");
  p.lr = c.num("probe.lr");
  p.seed = c.u64("seed");
  return p;
}

EvalRequest eval_request(const Config& c) {
  EvalRequest r;
  r.task = c.str("task");
  r.episodes = c.count("eval.episodes");
  r.base_seed = c.u64("eval.base_seed");
  r.camera = parse_camera_mode(c.str("eval.camera"));
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
  std::cout << path.string() << "\n";
}

// Flags that override config keys are collected as (key, value) pairs.
struct Overrides {
  std::vector<std::pair<std::string, std::string>> kv;
  void apply(Config& c) const {
    for (const auto& [k, v] : kv) c.set(k, v);
  }
};

void bind(CLI::App* app, Overrides& ov, const std::string& flag, const std::string& key, const std::string& doc) {
  app->add_option_function<std::string>(
      flag, [&ov, key](const std::string& v) { ov.kv.emplace_back(key, v); }, doc + " (config: " + key + ")");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tactile-conditioned policy toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  Overrides ov;
  app.add_option("--seed", g.seed, "base seed (config: seed)");
  app.add_option("--config", g.config_path, "key=value settings file");
  app.add_option("--out", g.out, "output directory")->capture_default_str();

  // collect
  auto* collect = app.add_subcommand("collect", "record expert demonstrations");
  bind(collect, ov, "--task", "task", "task id");
  bind(collect, ov, "--demos", "collect.n_demos", "successful episodes");
  bind(collect, ov, "--noise", "collect.noise", "expert noise scale");

  // pretrain-tactile
  auto* pretrain = app.add_subcommand("pretrain-tactile", "pretrain the tactile encoder on the probe tasks");
  bind(pretrain, ov, "--steps", "pretrain.steps", "optimizer steps");

  // probe
  auto* probe = app.add_subcommand("probe", "probe accuracy of frozen tactile encoders");
  std::vector<std::string> probe_encoders;
  probe->add_option("--encoder", probe_encoders, "name=checkpoint, repeatable; a frozen random encoder is always added");

  // train
  auto* train = app.add_subcommand("train", "behaviour cloning of a base policy");
  std::string train_demos, train_variant = "vision_only";
  train->add_option("--demos", train_demos, "demo file")->required();
  train->add_option("--variant", train_variant, "vision_only, tactile_concat or tacfilm")->capture_default_str();
  bind(train, ov, "--steps", "train.steps", "optimizer steps");

  // finetune
  auto* finetune = app.add_subcommand("finetune", "attach touch to a vision-only base and LoRA-finetune");
  std::string ft_base, ft_demos, ft_encoder;
  finetune->add_option("--base", ft_base, "vision-only checkpoint")->required();
  finetune->add_option("--demos", ft_demos, "demo file")->required();
  finetune->add_option("--encoder", ft_encoder, "tactile encoder checkpoint (random encoder when omitted)");
  bind(finetune, ov, "--variant", "finetune.variant", "tacfilm or tactile_concat");
  bind(finetune, ov, "--depth", "finetune.depth", "FiLM depth variant");
  bind(finetune, ov, "--steps", "finetune.steps", "optimizer steps");

  // eval
  auto* eval = app.add_subcommand("eval", "seeded rollouts with metrics");
  std::string ev_ckpt, ev_method;
  bool ev_expert = false;
  double ev_noise = 0.3;
  eval->add_option("--checkpoint", ev_ckpt, "policy checkpoint");
  eval->add_flag("--expert", ev_expert, "drive the rollouts with the scripted expert instead");
  eval->add_option("--expert-noise", ev_noise, "expert noise scale")->capture_default_str();
  eval->add_option("--method", ev_method, "label for the rows (default: the policy variant)");
  bind(eval, ov, "--task", "task", "task id");
  bind(eval, ov, "--episodes", "eval.episodes", "rollouts");
  bind(eval, ov, "--camera", "eval.camera", "clean, dim80 or freeze50");
  bind(eval, ov, "--base-seed", "eval.base_seed", "first episode seed");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "depth or camera ablation sweep");
  std::string ab_suite, ab_base, ab_demos, ab_encoder;
  std::vector<std::string> ab_methods;
  ablate->add_option("--suite", ab_suite, "depth or camera")->required()->check(CLI::IsMember({"depth", "camera"}));
  ablate->add_option("--base", ab_base, "depth: vision-only checkpoint");
  ablate->add_option("--demos", ab_demos, "depth: demo file for finetuning");
  ablate->add_option("--encoder", ab_encoder, "depth: tactile encoder checkpoint");
  ablate->add_option("--method", ab_methods, "camera: name=checkpoint, repeatable");
  bind(ablate, ov, "--task", "task", "camera suite task");
  bind(ablate, ov, "--episodes", "eval.episodes", "rollouts per condition");

  // report
  auto* report = app.add_subcommand("report", "tables and plot data from per-episode CSVs");
  std::vector<std::string> rep_inputs;
  report->add_option("--episodes", rep_inputs, "per-episode CSV files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  Config cfg;
  try {
    if (!g.config_path.empty()) cfg = Config::load(g.config_path);
    if (g.seed) cfg.set("seed", std::to_string(*g.seed));
    ov.apply(cfg);
    // Surface malformed values now, before any long-running work.
    parse_camera_mode(cfg.str("eval.camera"));
    parse_depth_variant(cfg.str("finetune.depth"));
    parse_variant(cfg.str("finetune.variant"));
    task_by_id(cfg.str("task"));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  const fs::path out = g.out;
  const std::uint64_t seed = cfg.u64("seed");
  try {
    if (collect->parsed()) {
      const TaskSpec& task = task_by_id(cfg.str("task"));
      CollectConfig cc;
      cc.n_demos = cfg.count("collect.n_demos");
      cc.noise_scale = cfg.num("collect.noise");
      cc.seed = seed;
      const DemoSet set = collect_demos(task, cc);
      fs::create_directories(out);
      const fs::path path = out / (task.id + ".demo");
      write_episodes(path, set);
      std::cout << path.string() << "\n";
    } else if (pretrain->parsed()) {
      PretrainConfig pc;
      pc.steps = cfg.count("pretrain.steps");
      pc.batch = cfg.count("pretrain.batch");
      pc.lr = cfg.num("pretrain.lr");
      pc.seed = seed;
      const ProbeSuite suite = make_probe_suite(cfg.count("probe.n"), seed);
      const Checkpoint enc = pretrain_tactile(suite, ViTConfig::tactile_default(), pc, print_log);
      fs::create_directories(out);
      write_checkpoint(out / "tactile_encoder.ckpt", enc);
      std::cout << (out / "tactile_encoder.ckpt").string() << "\n";
    } else if (probe->parsed()) {
      const ProbeSuite suite = make_probe_suite(cfg.count("probe.n"), seed);
      std::vector<std::pair<std::string, std::map<ProbeTask, double>>> cols;
      for (const auto& spec : probe_encoders) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw ConfigError("--encoder expects name=checkpoint, got '" + spec + "'");
        cols.emplace_back(spec.substr(0, eq), probe_eval(read_checkpoint(spec.substr(eq + 1)), suite, probe_config(cfg)));
      }
      cols.emplace_back("random", probe_eval(random_tactile_encoder(ViTConfig::tactile_default(), seed), suite,
                                             probe_config(cfg)));
      write_text(out / "probe.csv", probe_table_csv(cols));
    } else if (train->parsed()) {
      const DemoSet demos = read_episodes(train_demos);
      Policy p = make_policy(policy_config(cfg, parse_variant(train_variant)), demos, seed);
      const TrainConfig tc = train_config(cfg, "train", out / "train");
      const TrainLog log = train_policy(p, demos, tc, print_log);
      std::string csv = "step,loss\n";
      for (std::size_t i = 0; i < log.losses.size(); ++i) {
        csv += std::to_string(i) + "," + exact_double(log.losses[i]) + "\n";
      }
      write_text(out / "train" / "loss.csv", csv);
    } else if (finetune->parsed()) {
      const DemoSet demos = read_episodes(ft_demos);
      FinetuneConfig fc;
      fc.variant = parse_variant(cfg.str("finetune.variant"));
      fc.depth = parse_depth_variant(cfg.str("finetune.depth"));
      fc.lora = lora_config(cfg);
      fc.seed = seed;
      const Checkpoint base = read_checkpoint(ft_base);
      std::optional<Checkpoint> enc;
      if (!ft_encoder.empty()) enc = read_checkpoint(ft_encoder);
      Policy p = prepare_finetune(base, fc, enc ? &*enc : nullptr);
      std::cerr << "LoRA adapter values: " << p.lora_parameter_count() << "\n";
      const TrainLog log = train_policy(p, demos, train_config(cfg, "finetune", out / "finetune"), print_log);
      std::string csv = "step,loss\n";
      for (std::size_t i = 0; i < log.losses.size(); ++i) {
        csv += std::to_string(i) + "," + exact_double(log.losses[i]) + "\n";
      }
      write_text(out / "finetune" / "loss.csv", csv);
    } else if (eval->parsed()) {
      if (ev_expert == !ev_ckpt.empty()) throw ConfigError("eval needs exactly one of --checkpoint or --expert");
      EvalRequest req = eval_request(cfg);
      std::vector<EpisodeRow> rows;
      if (ev_expert) {
        req.method = ev_method.empty() ? "expert" : ev_method;
        rows = evaluate_expert(ev_noise, req);
      } else {
        const Policy p = Policy::from_checkpoint(read_checkpoint(ev_ckpt));
        req.method = ev_method.empty() ? variant_name(p.config().variant) : ev_method;
        rows = evaluate_policy(p, req);
      }
      const std::string stem = req.method + "_" + req.task + "_" + camera_mode_name(req.camera);
      write_text(out / ("episodes_" + stem + ".csv"), episodes_csv(rows));
      write_text(out / ("metrics_" + stem + ".csv"), metrics_csv(rows));
    } else if (ablate->parsed()) {
      std::vector<AblationRow> rows;
      if (ab_suite == "depth") {
        if (ab_base.empty() || ab_demos.empty()) throw ConfigError("ablate --suite depth needs --base and --demos");
        const Checkpoint base = read_checkpoint(ab_base);
        const DemoSet demos = read_episodes(ab_demos);
        std::optional<Checkpoint> enc;
        if (!ab_encoder.empty()) enc = read_checkpoint(ab_encoder);
        DepthAblationInput in;
        in.base = &base;
        in.demos = &demos;
        in.tactile_encoder = enc ? &*enc : nullptr;
        in.train = train_config(cfg, "finetune", out / "ablate_depth");
        in.lora = lora_config(cfg);
        in.id_task = cfg.str("ablate.id_task");
        in.ood_task = cfg.str("ablate.ood_task");
        in.episodes = cfg.count("eval.episodes");
        in.base_seed = cfg.u64("eval.base_seed");
        rows = ablate_depth(in, print_log);
      } else {
        if (ab_methods.empty()) throw ConfigError("ablate --suite camera needs at least one --method name=checkpoint");
        std::vector<Policy> policies;
        std::vector<std::string> names;
        for (const auto& spec : ab_methods) {
          const auto eq = spec.find('=');
          if (eq == std::string::npos) throw ConfigError("--method expects name=checkpoint, got '" + spec + "'");
          names.push_back(spec.substr(0, eq));
          policies.push_back(Policy::from_checkpoint(read_checkpoint(spec.substr(eq + 1))));
        }
        std::vector<std::pair<std::string, const Policy*>> methods;
        for (std::size_t i = 0; i < names.size(); ++i) methods.emplace_back(names[i], &policies[i]);
        rows = ablate_camera(methods, cfg.str("task"), cfg.count("eval.episodes"), cfg.u64("eval.base_seed"));
      }
      write_text(out / ("ablation_" + ab_suite + ".csv"), ablation_csv(rows));
    } else if (report->parsed()) {
      std::vector<EpisodeRow> rows;
      for (const auto& path : rep_inputs) {
        auto part = parse_episodes_csv(read_file(path));
        rows.insert(rows.end(), part.begin(), part.end());
      }
      const Report rep = make_report(rows);
      write_text(out / "report.md", rep.tables);
      write_text(out / "force_series.csv", rep.force_series);
      write_text(out / "time_series.csv", rep.time_series);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << " (byte " << e.offset() << ")\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
