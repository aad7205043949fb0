#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tvla/checkpoint.hpp"
#include "tvla/dataset.hpp"
#include "tvla/policy.hpp"
#include "tvla/sim.hpp"

namespace tvla {

using LogFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------- config

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string doc;
};

// Flat key=value settings. '#' starts a comment; blank lines are skipped.
// Every key must be one of Config::keys().
class Config {
 public:
  Config();
  static const std::vector<ConfigKey>& keys();
  // Throws ConfigError naming the first unknown key or malformed line.
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& str(const std::string& key) const;
  double num(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------- training

struct TrainConfig {
  std::size_t steps = 20000;
  std::size_t batch = 16;
  double lr = 3e-4;
  std::size_t warmup = 200;
  double clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  std::size_t ckpt_every = 0;          // 0 disables periodic checkpoints
  std::filesystem::path ckpt_dir;      // empty disables writing
};

// Linear warmup to lr over `warmup` steps, constant afterwards.
double lr_at(const TrainConfig& cfg, std::size_t step);

struct TrainLog {
  std::vector<double> losses;  // one per step
};

// Precomputed per-step training data for a demo set.
class DemoIndex {
 public:
  DemoIndex(const DemoSet& demos, const Policy& policy);
  std::size_t size() const { return samples_.size(); }

  // Batch over the given sample indices.
  PolicyBatch batch(std::span<const std::size_t> ids) const;

 private:
  struct Sample {
    std::size_t episode;
    std::size_t step;
  };
  const DemoSet& demos_;
  std::vector<Sample> samples_;
  std::vector<std::vector<int>> text_;            // per episode
  std::vector<std::vector<int>> tokens_;          // per sample
  std::vector<Image> pairs_;                      // per sample, empty when unused
  std::vector<TactileFeatures> features_;         // per sample, empty when unused
};

// Behaviour cloning with teacher-forced cross-entropy over action tokens.
// Throws NumericError on a non-finite loss after writing last_good.ckpt to
// cfg.ckpt_dir when one is set.
TrainLog train_policy(Policy& policy, const DemoSet& demos, const TrainConfig& cfg, const LogFn& log = {});

// Fresh policy with norm stats taken from the demos.
Policy make_policy(const PolicyConfig& config, const DemoSet& demos, std::uint64_t seed);

struct FinetuneConfig {
  Variant variant = Variant::TacFiLM;
  DepthVariant depth = DepthVariant::All;
  LoraConfig lora;
  std::uint64_t seed = 0;
};

// Loads a VisionOnly base, attaches the variant's tactile path, installs the
// tactile encoder (when given) and wraps the base with LoRA. Throws
// ConfigError for variant VisionOnly or a base that already fuses touch.
Policy prepare_finetune(const Checkpoint& base, const FinetuneConfig& cfg, const Checkpoint* tactile_encoder);

// ---------------------------------------------------------------- tactile probes

struct ProbeSplit {
  std::vector<ProbeExample> train;
  std::vector<ProbeExample> test;
};
using ProbeSuite = std::map<ProbeTask, ProbeSplit>;

// n examples per task, first 80% by index for training.
ProbeSuite make_probe_suite(std::size_t n, std::uint64_t seed);

struct PretrainConfig {
  std::size_t steps = 1500;
  std::size_t batch = 16;  // per probe task
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Checkpoint holding only frozen tactile.* tensors.
Checkpoint random_tactile_encoder(const ViTConfig& config, std::uint64_t seed);
// Multi-task training of the encoder with one temporary linear head per
// probe task; heads are discarded. Throws NumericError on divergence.
Checkpoint pretrain_tactile(const ProbeSuite& suite, const ViTConfig& config, const PretrainConfig& cfg,
                            const LogFn& log = {});

struct ProbeEvalConfig {
  std::size_t hidden = 64;
  std::size_t steps = 400;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

// Held-out accuracy (percent) of a fresh two-layer MLP on frozen pooled
// embeddings, per probe task.
std::map<ProbeTask, double> probe_eval(const Checkpoint& encoder, const ProbeSuite& suite,
                                       const ProbeEvalConfig& cfg);

// Rows: probe tasks; columns: encoder names.
std::string probe_table_csv(const std::vector<std::pair<std::string, std::map<ProbeTask, double>>>& columns);

// ---------------------------------------------------------------- evaluation

struct EpisodeRow {
  std::string method;
  std::string task;
  std::string camera;
  std::uint64_t seed = 0;
  bool success = false;
  bool direct = false;
  bool contact = false;
  double max_force = 0.0;
  double time_s = 0.0;
  std::size_t steps = 0;
  std::size_t retreats = 0;
  std::vector<double> forces;  // per step
};

struct RolloutMetrics {
  std::size_t n_episodes = 0;
  double success_rate = 0.0;  // percent
  double direct_rate = 0.0;   // percent
  // Over all episodes; episodes without contact contribute 0.
  double force_mean = 0.0;
  double force_std = 0.0;
  // Over successful episodes with at least one retreat.
  std::size_t recovered = 0;
  double recovered_force_mean = 0.0;
  double recovered_force_std = 0.0;
  double time_mean = 0.0;
  double time_std = 0.0;
};

// Population standard deviations.
RolloutMetrics aggregate(std::span<const EpisodeRow> rows);

struct EvalRequest {
  std::string task = "circle2";
  std::size_t episodes = 30;
  std::uint64_t base_seed = 1000;
  CameraMode camera = CameraMode::Clean;
  std::vector<std::uint64_t> seeds;  // overrides base_seed + i when non-empty
  std::string method;               // label for the rows

  std::vector<std::uint64_t> seed_list() const;
};

// Greedy rollouts of a policy. Frames are quantized to 8 bits as in the
// recorded demos.
std::vector<EpisodeRow> evaluate_policy(const Policy& policy, const EvalRequest& req);
// Policy bypass: the scripted expert drives the same loop.
std::vector<EpisodeRow> evaluate_expert(double noise_scale, const EvalRequest& req);

// Per-episode CSV. Columns: method,task,camera,seed,success,direct,contact,
// max_force,time_s,steps,retreats,forces (forces ';'-separated).
std::string episodes_csv(std::span<const EpisodeRow> rows);
// Throws FormatError naming the offending column.
std::vector<EpisodeRow> parse_episodes_csv(const std::string& text);

// One row per (method, task, camera) group with the seed set used.
std::string metrics_csv(std::span<const EpisodeRow> rows);

struct Report {
  std::string tables;         // text tables, best success/direct per task in **bold**
  std::string force_series;   // method,task,seed,step,force for contact steps of recovered insertions
  std::string time_series;    // method,task,seed,success,time_s
};
Report make_report(std::span<const EpisodeRow> rows);

// ---------------------------------------------------------------- ablations

struct AblationRow {
  std::string suite;
  std::string method;
  std::string task;
  std::string condition;
  RolloutMetrics metrics;
  std::string seeds;
};

std::string ablation_csv(std::span<const AblationRow> rows);
// "1000-1029" for consecutive runs, otherwise ';'-joined.
std::string seed_set_string(std::span<const std::uint64_t> seeds);

struct DepthAblationInput {
  const Checkpoint* base = nullptr;
  const Checkpoint* tactile_encoder = nullptr;
  const DemoSet* demos = nullptr;
  TrainConfig train;
  LoraConfig lora;
  std::string id_task = "circle3";
  std::string ood_task = "pentagon3";
  std::size_t episodes = 30;
  std::uint64_t base_seed = 1000;
};
std::vector<AblationRow> ablate_depth(const DepthAblationInput& in, const LogFn& log = {});

// Evaluates each (method, policy) under Dim80 and Freeze50.
std::vector<AblationRow> ablate_camera(const std::vector<std::pair<std::string, const Policy*>>& methods,
                                       const std::string& task, std::size_t episodes, std::uint64_t base_seed);

}  // namespace tvla
