#include "tvla/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "tvla/errors.hpp"
#include "tvla/nn.hpp"
#include "tvla/ops.hpp"
#include "tvla/optim.hpp"

namespace tvla {

// ---------------------------------------------------------------- config

const std::vector<ConfigKey>& Config::keys() {
  static const std::vector<ConfigKey> k = {
      {"seed", "0", "base seed for every random stream"},
      {"task", "circle2", "benchmark task id for collect/train/eval"},
      {"collect.n_demos", "80", "successful expert episodes to record"},
      {"collect.noise", "0.3", "expert noise scale (mm)"},
      {"policy.vision_dim", "64", "vision ViT embedding width"},
      {"policy.vision_blocks", "6", "vision ViT depth"},
      {"policy.vision_heads", "4", "vision ViT attention heads"},
      {"policy.d_lm", "96", "decoder width"},
      {"policy.lm_blocks", "4", "decoder depth"},
      {"policy.lm_heads", "4", "decoder attention heads"},
      {"train.steps", "20000", "optimizer steps"},
      {"train.batch", "16", "samples per step"},
      {"train.lr", "0.0003", "peak learning rate"},
      {"train.warmup", "200", "linear warmup steps"},
      {"train.clip", "1.0", "global gradient-norm clip"},
      {"train.log_every", "100", "loss logging cadence (steps)"},
      {"train.ckpt_every", "1000", "periodic checkpoint cadence (steps), 0 disables"},
      {"finetune.variant", "tacfilm", "tacfilm or tactile_concat"},
      {"finetune.depth", "all", "FiLM depth variant: all, early, middle, late"},
      {"finetune.steps", "2000", "finetune optimizer steps"},
      {"finetune.lr", "0.001", "finetune learning rate"},
      {"lora.rank", "8", "LoRA rank"},
      {"lora.alpha", "16", "LoRA alpha"},
      {"pretrain.steps", "1500", "tactile pretraining steps"},
      {"pretrain.batch", "16", "examples per probe task per step"},
      {"pretrain.lr", "0.001", "tactile pretraining learning rate"},
      {"probe.n", "2000", "examples per probe task"},
      {"probe.hidden", "64", "probe MLP hidden width"},
      {"probe.steps", "400", "probe MLP full-batch steps"},
      {"probe.lr", "0.01", "probe MLP learning rate"},
      {"eval.episodes", "30", "rollouts per evaluation"},
      {"eval.base_seed", "1000", "episode i uses seed base_seed + i"},
      {"eval.camera", "clean", "clean, dim80 or freeze50"},
      {"ablate.id_task", "circle3", "in-distribution task of the depth suite"},
      {"ablate.ood_task", "pentagon3", "out-of-distribution task of the depth suite"},
  };
  return k;
}

Config::Config() {
  for (const auto& k : keys()) values_[k.name] = k.default_value;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double Config::num(const std::string& key) const {
  const std::string& v = str(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t Config::u64(const std::string& key) const {
  const std::string& v = str(key);
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t Config::count(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

// ---------------------------------------------------------------- training

double lr_at(const TrainConfig& cfg, std::size_t step) {
  if (cfg.warmup == 0 || step >= cfg.warmup) return cfg.lr;
  return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup);
}

DemoIndex::DemoIndex(const DemoSet& demos, const Policy& policy) : demos_(demos) {
  const PolicyConfig& pc = policy.config();
  const bool touch = pc.variant != Variant::VisionOnly;
  for (std::size_t e = 0; e < demos.episodes.size(); ++e) {
    const EpisodeRecord& ep = demos.episodes[e];
    text_.push_back(WordVocab::builtin().encode(ep.instruction));
    for (std::size_t t = 0; t < ep.steps.size(); ++t) {
      samples_.push_back({e, t});
      const Action& a = ep.steps[t].action;
      const double v[3] = {a.dx, a.dz, a.dtheta};
      tokens_.push_back(tokenize_action(v, policy.norm_stats(), pc.vocab));
      if (touch) {
        pairs_.push_back(episode_tactile_pair(ep, t));
        features_.push_back(policy.tactile_features(pairs_.back()));
      }
    }
  }
}

PolicyBatch DemoIndex::batch(std::span<const std::size_t> ids) const {
  PolicyBatch b;
  for (std::size_t id : ids) {
    const Sample& s = samples_.at(id);
    const StepRecord& rec = demos_.episodes[s.episode].steps[s.step];
    PolicyInput in;
    in.rgb = &rec.rgb;
    in.text = text_[s.episode];
    if (!pairs_.empty()) {
      in.tactile = &pairs_[id];
      b.tactile.push_back(&features_[id]);
    }
    b.inputs.push_back(in);
    b.actions.push_back(tokens_[id]);
  }
  return b;
}

namespace {

void write_checkpoint_to(const std::filesystem::path& dir, const std::string& name, const Checkpoint& c) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  write_checkpoint(dir / name, c);
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(prec);
  ss << v;
  return ss.str();
}

}  // namespace

TrainLog train_policy(Policy& policy, const DemoSet& demos, const TrainConfig& cfg, const LogFn& log) {
  if (cfg.batch == 0) throw ConfigError("train: batch must be positive");
  if (demos.episodes.empty()) throw PreconditionError("train: demo set is empty");
  const DemoIndex index(demos, policy);
  const std::vector<ParamPtr> params = policy.trainable();
  AdamState adam;
  Rng sampler(cfg.seed, "train/sample");
  TrainLog out;
  std::optional<Checkpoint> last_good;
  std::vector<std::size_t> ids(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& i : ids) i = static_cast<std::size_t>(sampler.below(index.size()));
    const PolicyBatch batch = index.batch(ids);
    std::vector<int> targets;
    for (const auto& a : batch.actions) targets.insert(targets.end(), a.begin(), a.end());
    double loss_value = 0.0;
    try {
      const Var loss = ops::softmax_cross_entropy(policy.forward(batch), targets);
      loss_value = loss.value().item();
      if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");
      zero_grad(params);
      backward(loss);
      if (cfg.clip > 0.0) clip_grad_norm(params, cfg.clip);
      adam.lr = lr_at(cfg, step);
      adam_step(params, adam);
    } catch (const NumericError& e) {
      const Checkpoint good = last_good ? *last_good : policy.to_checkpoint();
      write_checkpoint_to(cfg.ckpt_dir, "last_good.ckpt", good);
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what() +
                         (cfg.ckpt_dir.empty() ? "" : "; last good checkpoint in " + cfg.ckpt_dir.string()));
    }
    out.losses.push_back(loss_value);
    if (cfg.log_every > 0 && step % cfg.log_every == 0) {
      last_good = policy.to_checkpoint();
      if (log) log("step " + std::to_string(step) + " loss " + fmt(loss_value));
    }
    if (cfg.ckpt_every > 0 && step > 0 && step % cfg.ckpt_every == 0) {
      write_checkpoint_to(cfg.ckpt_dir, "step" + std::to_string(step) + ".ckpt", policy.to_checkpoint());
    }
  }
  write_checkpoint_to(cfg.ckpt_dir, "final.ckpt", policy.to_checkpoint());
  return out;
}

Policy make_policy(const PolicyConfig& config, const DemoSet& demos, std::uint64_t seed) {
  Policy p = Policy::build(config, seed);
  p.set_norm_stats(compute_norm_stats(demos));
  return p;
}

Policy prepare_finetune(const Checkpoint& base, const FinetuneConfig& cfg, const Checkpoint* tactile_encoder) {
  if (cfg.variant == Variant::VisionOnly) {
    throw ConfigError("finetune: variant vision_only has no tactile path to attach");
  }
  Policy p = Policy::from_checkpoint(base);
  if (p.config().variant != Variant::VisionOnly) {
    throw ConfigError(std::string("finetune: base checkpoint is ") + variant_name(p.config().variant) +
                      ", expected vision_only");
  }
  p.attach_variant(cfg.variant, cfg.depth);
  if (tactile_encoder) p.load_tactile_encoder(*tactile_encoder);
  p.lora_wrap(cfg.lora, cfg.seed);
  return p;
}

// ---------------------------------------------------------------- tactile probes

ProbeSuite make_probe_suite(std::size_t n, std::uint64_t seed) {
  ProbeSuite suite;
  const std::size_t n_train = n * 8 / 10;
  for (ProbeTask t : kProbeTasks) {
    std::vector<ProbeExample> all = make_probe_dataset(t, n, seed);
    ProbeSplit& s = suite[t];
    s.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + n_train));
    s.test.assign(std::make_move_iterator(all.begin() + n_train), std::make_move_iterator(all.end()));
  }
  return suite;
}

namespace {

Checkpoint encoder_checkpoint(const ParameterRegistry& reg, const ViTConfig& c, const std::string& origin) {
  Checkpoint ck;
  ck.set("kind", "tactile_encoder");
  ck.set("origin", origin);
  ck.set("image_size", std::to_string(c.image_size));
  ck.set("patch_size", std::to_string(c.patch_size));
  ck.set("channels", std::to_string(c.channels));
  ck.set("embed_dim", std::to_string(c.embed_dim));
  ck.set("blocks", std::to_string(c.blocks));
  ck.set("heads", std::to_string(c.heads));
  ck.set("mlp_ratio", exact_double(c.mlp_ratio));
  for (const auto& p : reg.all()) {
    if (p->name.starts_with("tactile.")) ck.tensors.push_back({p->name, true, p->value()});
  }
  return ck;
}

ViTConfig encoder_config(const Checkpoint& ck) {
  ViTConfig c;
  auto sz = [&](const char* k) { return static_cast<std::size_t>(std::stoull(ck.get(k))); };
  c.image_size = sz("image_size");
  c.patch_size = sz("patch_size");
  c.channels = sz("channels");
  c.embed_dim = sz("embed_dim");
  c.blocks = sz("blocks");
  c.heads = sz("heads");
  c.mlp_ratio = parse_double(ck.get("mlp_ratio"));
  return c;
}

struct LoadedEncoder {
  ParameterRegistry reg;
  TactileEncoder enc;
};

std::unique_ptr<LoadedEncoder> load_encoder(const Checkpoint& ck) {
  auto out = std::make_unique<LoadedEncoder>();
  Rng rng(0, "probe/shell");
  out->enc = TactileEncoder(encoder_config(ck), out->reg, "tactile", rng);
  for (const auto& p : out->reg.all()) {
    const CheckpointTensor* t = ck.find(p->name);
    if (!t) throw LookupError("tactile checkpoint lacks tensor " + p->name);
    if (t->value.shape() != p->value().shape()) throw DimensionError("tactile tensor " + p->name + " shape differs");
    p->mutable_value() = t->value;
    p->set_frozen(true);
  }
  return out;
}

}  // namespace

Checkpoint random_tactile_encoder(const ViTConfig& config, std::uint64_t seed) {
  ParameterRegistry reg;
  Rng rng(seed, "tactile/init");
  TactileEncoder enc(config, reg, "tactile", rng);
  return encoder_checkpoint(reg, config, "random");
}

Checkpoint pretrain_tactile(const ProbeSuite& suite, const ViTConfig& config, const PretrainConfig& cfg,
                            const LogFn& log) {
  for (ProbeTask t : kProbeTasks) {
    if (!suite.count(t) || suite.at(t).train.empty()) {
      throw PreconditionError(std::string("pretrain_tactile: missing probe data for ") + probe_task_name(t));
    }
  }
  ParameterRegistry reg;
  Rng rng(cfg.seed, "tactile/init");
  TactileEncoder enc(config, reg, "tactile", rng);
  Rng head_rng(cfg.seed, "tactile/heads");
  std::vector<Linear> heads;
  for (ProbeTask t : kProbeTasks) {
    heads.emplace_back(reg, std::string("head.") + probe_task_name(t), config.embed_dim, 2, head_rng);
  }
  const std::vector<ParamPtr> params = reg.trainable();
  AdamState adam;
  adam.lr = cfg.lr;
  Rng sampler(cfg.seed, "tactile/sample");
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Var total;
    std::size_t h = 0;
    for (ProbeTask t : kProbeTasks) {
      const auto& train = suite.at(t).train;
      std::vector<Image> images;
      std::vector<int> labels;
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        const ProbeExample& ex = train[static_cast<std::size_t>(sampler.below(train.size()))];
        images.push_back(ex.pair);
        labels.push_back(ex.label);
      }
      const Var loss = ops::softmax_cross_entropy(heads[h++].forward(enc.encode(images).pooled), labels);
      total = total ? ops::add(total, loss) : loss;
    }
    const double v = total.value().item();
    if (!std::isfinite(v)) throw NumericError("tactile pretraining diverged at step " + std::to_string(step));
    zero_grad(params);
    backward(total);
    clip_grad_norm(params, 1.0);
    adam_step(params, adam);
    if (log && step % 100 == 0) log("pretrain step " + std::to_string(step) + " loss " + fmt(v));
  }
  return encoder_checkpoint(reg, config, "pretrained");
}

std::map<ProbeTask, double> probe_eval(const Checkpoint& encoder, const ProbeSuite& suite,
                                       const ProbeEvalConfig& cfg) {
  const auto loaded = load_encoder(encoder);
  const std::size_t d = loaded->enc.config().embed_dim;
  auto embed = [&](const std::vector<ProbeExample>& xs) {
    Tensor out({xs.size(), d});
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const TactileEmbedding e = loaded->enc.encode_one(xs[i].pair);
      std::copy(e.pooled.begin(), e.pooled.end(), out.data() + i * d);
    }
    return out;
  };
  std::map<ProbeTask, double> acc;
  for (const auto& [task, split] : suite) {
    Tensor xtr = embed(split.train);
    Tensor xte = embed(split.test);
    // Standardize with training-split statistics.
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < xtr.rows(); ++i) mean += xtr.at(i, j);
      mean /= static_cast<double>(xtr.rows());
      for (std::size_t i = 0; i < xtr.rows(); ++i) sq += (xtr.at(i, j) - mean) * (xtr.at(i, j) - mean);
      const double sd = std::sqrt(sq / static_cast<double>(xtr.rows())) + 1e-8;
      for (std::size_t i = 0; i < xtr.rows(); ++i) xtr.at(i, j) = (xtr.at(i, j) - mean) / sd;
      for (std::size_t i = 0; i < xte.rows(); ++i) xte.at(i, j) = (xte.at(i, j) - mean) / sd;
    }
    std::vector<int> ytr;
    for (const auto& ex : split.train) ytr.push_back(ex.label);
    ParameterRegistry reg;
    Rng rng(cfg.seed, std::string("probe/mlp/") + probe_task_name(task));
    Mlp mlp(reg, "probe", d, cfg.hidden, 2, rng);
    const std::vector<ParamPtr> params = reg.trainable();
    AdamState adam;
    adam.lr = cfg.lr;
    const Var x = ops::constant(xtr);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      const Var loss = ops::softmax_cross_entropy(mlp.forward(x), ytr);
      zero_grad(params);
      backward(loss);
      adam_step(params, adam);
    }
    NoGradGuard guard;
    const Tensor logits = mlp.forward(ops::constant(xte)).value();
    std::size_t right = 0;
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      const int pred = logits.at(i, 1) > logits.at(i, 0) ? 1 : 0;
      right += pred == split.test[i].label;
    }
    acc[task] = 100.0 * static_cast<double>(right) / static_cast<double>(split.test.size());
  }
  return acc;
}

std::string probe_table_csv(const std::vector<std::pair<std::string, std::map<ProbeTask, double>>>& columns) {
  std::string out = "probe_task";
  for (const auto& [name, _] : columns) out += "," + name;
  out += "\n";
  for (ProbeTask t : kProbeTasks) {
    out += probe_task_name(t);
    for (const auto& [_, acc] : columns) {
      auto it = acc.find(t);
      out += "," + (it == acc.end() ? std::string() : fmt(it->second, 2));
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------- evaluation

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

using StepFn = std::function<Action(const SimState&, const StepInfo&, const Image& rgb, const Image& tactile_pair)>;

EpisodeRow rollout(const TaskSpec& task, std::uint64_t seed, CameraMode camera, const StepFn& act) {
  PegInsertionEnv env(task);
  Observation obs = env.reset(seed);
  Rng cam_rng(seed, "camera");
  std::vector<Image> tactile_history;
  Image last_rgb;
  bool have_last = false;
  std::vector<TraceStep> trace;
  StepInfo last;
  EpisodeRow row;
  row.task = task.id;
  row.camera = camera_mode_name(camera);
  row.seed = seed;
  while (!env.state().terminated) {
    const Image rgb = quantized(degrade_camera(obs.rgb, camera, cam_rng, have_last ? &last_rgb : nullptr));
    last_rgb = rgb;
    have_last = true;
    tactile_history.push_back(quantized(obs.tactile));
    const std::size_t t = tactile_history.size() - 1;
    const Image pair = tactile_preprocess(tactile_history, t, tactile_history.front(), kTactileSize);
    const Action a = act(env.state(), last, rgb, pair);
    StepResult r = env.step(a);
    trace.push_back({env.state().pose, r.info});
    row.forces.push_back(r.info.contact_force);
    last = r.info;
    obs = std::move(r.obs);
  }
  const EpisodeOutcome o = episode_outcome(trace, task.depth_required);
  row.success = o.success;
  row.direct = o.direct;
  row.contact = o.contact;
  row.max_force = o.max_force;
  row.time_s = o.time_s;
  row.steps = o.steps;
  row.retreats = o.retreats;
  return row;
}

}  // namespace

RolloutMetrics aggregate(std::span<const EpisodeRow> rows) {
  RolloutMetrics m;
  m.n_episodes = rows.size();
  if (rows.empty()) return m;
  std::size_t succ = 0, direct = 0;
  std::vector<double> force, rec_force, time;
  for (const auto& r : rows) {
    succ += r.success;
    direct += r.success && r.direct;
    force.push_back(r.contact ? r.max_force : 0.0);
    time.push_back(r.time_s);
    if (r.success && r.retreats > 0) rec_force.push_back(r.max_force);
  }
  const double n = static_cast<double>(rows.size());
  m.success_rate = 100.0 * static_cast<double>(succ) / n;
  m.direct_rate = 100.0 * static_cast<double>(direct) / n;
  m.force_mean = mean_of(force);
  m.force_std = std_of(force);
  m.recovered = rec_force.size();
  m.recovered_force_mean = mean_of(rec_force);
  m.recovered_force_std = std_of(rec_force);
  m.time_mean = mean_of(time);
  m.time_std = std_of(time);
  return m;
}

std::vector<std::uint64_t> EvalRequest::seed_list() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> s(episodes);
  for (std::size_t i = 0; i < episodes; ++i) s[i] = base_seed + i;
  return s;
}

std::vector<EpisodeRow> evaluate_policy(const Policy& policy, const EvalRequest& req) {
  const TaskSpec& task = task_by_id(req.task);
  const std::vector<int> text = WordVocab::builtin().encode(task.instruction);
  const bool touch = policy.config().variant != Variant::VisionOnly;
  std::vector<EpisodeRow> rows;
  for (std::uint64_t seed : req.seed_list()) {
    EpisodeRow row = rollout(task, seed, req.camera,
                             [&](const SimState&, const StepInfo&, const Image& rgb, const Image& pair) {
                               PolicyInput in{&rgb, touch ? &pair : nullptr, text};
                               const std::vector<double> a = policy.predict_action(in);
                               return Action{a[0], a[1], a[2]};
                             });
    row.method = req.method.empty() ? variant_name(policy.config().variant) : req.method;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<EpisodeRow> evaluate_expert(double noise_scale, const EvalRequest& req) {
  const TaskSpec& task = task_by_id(req.task);
  std::vector<EpisodeRow> rows;
  for (std::uint64_t seed : req.seed_list()) {
    ScriptedExpert expert(task, noise_scale, seed);
    EpisodeRow row = rollout(task, seed, req.camera,
                             [&](const SimState& s, const StepInfo& last, const Image&, const Image&) {
                               return clamp_action(expert.act(s, last));
                             });
    row.method = req.method.empty() ? "expert" : req.method;
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

const std::vector<std::string> kEpisodeColumns = {"method", "task",  "camera", "seed",     "success", "direct",
                                                  "contact", "max_force", "time_s", "steps", "retreats", "forces"};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string episodes_csv(std::span<const EpisodeRow> rows) {
  std::string out;
  for (std::size_t i = 0; i < kEpisodeColumns.size(); ++i) out += (i ? "," : "") + kEpisodeColumns[i];
  out += "\n";
  for (const auto& r : rows) {
    std::string forces;
    for (std::size_t i = 0; i < r.forces.size(); ++i) forces += (i ? ";" : "") + exact_double(r.forces[i]);
    out += r.method + "," + r.task + "," + r.camera + "," + std::to_string(r.seed) + "," +
           (r.success ? "1" : "0") + "," + (r.direct ? "1" : "0") + "," + (r.contact ? "1" : "0") + "," +
           exact_double(r.max_force) + "," + exact_double(r.time_s) + "," + std::to_string(r.steps) + "," +
           std::to_string(r.retreats) + "," + forces + "\n";
  }
  return out;
}

std::vector<EpisodeRow> parse_episodes_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line)) return {};
  const std::vector<std::string> header = split(trim(line), ',');
  for (std::size_t i = 0; i < kEpisodeColumns.size(); ++i) {
    if (i >= header.size() || header[i] != kEpisodeColumns[i]) {
      throw FormatError("episode CSV column " + std::to_string(i + 1) + " should be '" + kEpisodeColumns[i] +
                            "', found '" + (i < header.size() ? header[i] : std::string()) + "'",
                        offset);
    }
  }
  if (header.size() != kEpisodeColumns.size()) {
    throw FormatError("episode CSV has unexpected column '" + header[kEpisodeColumns.size()] + "'", offset);
  }
  offset += line.size() + 1;
  std::vector<EpisodeRow> rows;
  while (std::getline(in, line)) {
    const std::string l = trim(line);
    if (l.empty()) {
      offset += line.size() + 1;
      continue;
    }
    const std::vector<std::string> f = split(l, ',');
    if (f.size() != kEpisodeColumns.size()) {
      throw FormatError("episode CSV row has " + std::to_string(f.size()) + " fields, expected " +
                            std::to_string(kEpisodeColumns.size()),
                        offset);
    }
    std::size_t col = 0;
    try {
      EpisodeRow r;
      r.method = f[col++];
      r.task = f[col++];
      r.camera = f[col++];
      r.seed = std::stoull(f[col++]);
      r.success = std::stoi(f[col++]) != 0;
      r.direct = std::stoi(f[col++]) != 0;
      r.contact = std::stoi(f[col++]) != 0;
      r.max_force = parse_double(f[col++]);
      r.time_s = parse_double(f[col++]);
      r.steps = std::stoull(f[col++]);
      r.retreats = std::stoull(f[col++]);
      if (!f[col].empty()) {
        for (const auto& v : split(f[col], ';')) r.forces.push_back(parse_double(v));
      }
      rows.push_back(std::move(r));
    } catch (const std::exception&) {
      throw FormatError("bad value in episode CSV column '" + kEpisodeColumns[col] + "'", offset);
    }
    offset += line.size() + 1;
  }
  return rows;
}

std::string seed_set_string(std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) return "";
  bool consecutive = true;
  for (std::size_t i = 1; i < seeds.size(); ++i) consecutive &= seeds[i] == seeds[i - 1] + 1;
  if (consecutive && seeds.size() > 1) {
    return std::to_string(seeds.front()) + "-" + std::to_string(seeds.back());
  }
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? ";" : "") + std::to_string(seeds[i]);
  return s;
}

namespace {

using GroupKey = std::tuple<std::string, std::string, std::string>;

std::vector<std::pair<GroupKey, std::vector<EpisodeRow>>> group_rows(std::span<const EpisodeRow> rows) {
  std::vector<std::pair<GroupKey, std::vector<EpisodeRow>>> groups;
  for (const auto& r : rows) {
    const GroupKey k{r.method, r.task, r.camera};
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == k; });
    if (it == groups.end()) {
      groups.push_back({k, {}});
      it = groups.end() - 1;
    }
    it->second.push_back(r);
  }
  return groups;
}

std::string metrics_header() {
  return "success_rate,direct_rate,avg_max_force,avg_max_force_std,recovered,recovered_max_force,"
         "recovered_max_force_std,avg_time_s,avg_time_std,n_episodes";
}

std::string metrics_fields(const RolloutMetrics& m) {
  return fmt(m.success_rate, 2) + "," + fmt(m.direct_rate, 2) + "," + fmt(m.force_mean) + "," + fmt(m.force_std) +
         "," + std::to_string(m.recovered) + "," + fmt(m.recovered_force_mean) + "," + fmt(m.recovered_force_std) +
         "," + fmt(m.time_mean, 2) + "," + fmt(m.time_std, 2) + "," + std::to_string(m.n_episodes);
}

}  // namespace

std::string metrics_csv(std::span<const EpisodeRow> rows) {
  std::string out = "method,task,camera," + metrics_header() + ",seeds\n";
  for (const auto& [key, group] : group_rows(rows)) {
    std::vector<std::uint64_t> seeds;
    for (const auto& r : group) seeds.push_back(r.seed);
    out += std::get<0>(key) + "," + std::get<1>(key) + "," + std::get<2>(key) + "," +
           metrics_fields(aggregate(group)) + "," + seed_set_string(seeds) + "\n";
  }
  return out;
}

Report make_report(std::span<const EpisodeRow> rows) {
  Report rep;
  const auto groups = group_rows(rows);
  std::vector<RolloutMetrics> metrics;
  for (const auto& g : groups) metrics.push_back(aggregate(g.second));

  // Best success and direct rates per (task, camera).
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> best;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto k = std::make_pair(std::get<1>(groups[i].first), std::get<2>(groups[i].first));
    auto [it, fresh] = best.try_emplace(k, metrics[i].success_rate, metrics[i].direct_rate);
    if (!fresh) {
      it->second.first = std::max(it->second.first, metrics[i].success_rate);
      it->second.second = std::max(it->second.second, metrics[i].direct_rate);
    }
  }
  auto bold = [](const std::string& s, bool on) { return on ? "**" + s + "**" : s; };
  std::string& t = rep.tables;
  t += "| method | task | camera | Success % | Direct % | Avg Max Force (N) | Recovered Max Force (N) | Avg Time (s) |\n";
  t += "|---|---|---|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& [method, task, camera] = groups[i].first;
    const RolloutMetrics& m = metrics[i];
    const auto& b = best.at({task, camera});
    t += "| " + method + " | " + task + " | " + camera + " | " + bold(fmt(m.success_rate, 2), m.success_rate == b.first) +
         " | " + bold(fmt(m.direct_rate, 2), m.direct_rate == b.second) + " | " + fmt(m.force_mean, 2) + " ± " +
         fmt(m.force_std, 2) + " | " + fmt(m.recovered_force_mean, 2) + " ± " + fmt(m.recovered_force_std, 2) +
         " | " + fmt(m.time_mean, 2) + " ± " + fmt(m.time_std, 2) + " |\n";
  }

  rep.force_series = "method,task,seed,step,force\n";
  rep.time_series = "method,task,seed,success,time_s\n";
  for (const auto& r : rows) {
    rep.time_series += r.method + "," + r.task + "," + std::to_string(r.seed) + "," + (r.success ? "1" : "0") + "," +
                       fmt(r.time_s, 1) + "\n";
    if (!(r.success && r.retreats > 0)) continue;
    for (std::size_t s = 0; s < r.forces.size(); ++s) {
      if (r.forces[s] > 0.0) {
        rep.force_series += r.method + "," + r.task + "," + std::to_string(r.seed) + "," + std::to_string(s) + "," +
                            exact_double(r.forces[s]) + "\n";
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------- ablations

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "suite,method,task,condition," + metrics_header() + ",seeds\n";
  for (const auto& r : rows) {
    out += r.suite + "," + r.method + "," + r.task + "," + r.condition + "," + metrics_fields(r.metrics) + "," +
           r.seeds + "\n";
  }
  return out;
}

std::vector<AblationRow> ablate_depth(const DepthAblationInput& in, const LogFn& log) {
  if (!in.base || !in.demos) throw PreconditionError("ablate_depth: base checkpoint and demos are required");
  std::vector<AblationRow> rows;
  for (DepthVariant d : {DepthVariant::All, DepthVariant::Early, DepthVariant::Middle, DepthVariant::Late}) {
    FinetuneConfig fc;
    fc.variant = Variant::TacFiLM;
    fc.depth = d;
    fc.lora = in.lora;
    fc.seed = in.train.seed;
    Policy p = prepare_finetune(*in.base, fc, in.tactile_encoder);
    TrainConfig tc = in.train;
    if (!tc.ckpt_dir.empty()) tc.ckpt_dir /= std::string("depth_") + depth_variant_name(d);
    if (log) log(std::string("depth ") + depth_variant_name(d) + ": finetuning");
    train_policy(p, *in.demos, tc, log);
    for (const std::string& task : {in.id_task, in.ood_task}) {
      EvalRequest req;
      req.task = task;
      req.episodes = in.episodes;
      req.base_seed = in.base_seed;
      const auto eval = evaluate_policy(p, req);
      const auto seeds = req.seed_list();
      rows.push_back({"depth", std::string("tacfilm_") + depth_variant_name(d), task,
                      task == in.id_task ? "id" : "ood", aggregate(eval), seed_set_string(seeds)});
    }
  }
  return rows;
}

std::vector<AblationRow> ablate_camera(const std::vector<std::pair<std::string, const Policy*>>& methods,
                                       const std::string& task, std::size_t episodes, std::uint64_t base_seed) {
  std::vector<AblationRow> rows;
  for (const auto& [name, policy] : methods) {
    for (CameraMode mode : {CameraMode::Dim80, CameraMode::Freeze50}) {
      EvalRequest req;
      req.task = task;
      req.episodes = episodes;
      req.base_seed = base_seed;
      req.camera = mode;
      req.method = name;
      const auto eval = evaluate_policy(*policy, req);
      const auto seeds = req.seed_list();
      rows.push_back({"camera", name, task, camera_mode_name(mode), aggregate(eval), seed_set_string(seeds)});
    }
  }
  return rows;
}

}  // namespace tvla
