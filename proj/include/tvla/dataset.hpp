#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tvla/image.hpp"
#include "tvla/policy.hpp"
#include "tvla/sim.hpp"

namespace tvla {

// One 10 Hz record: the observation seen before acting and the action taken.
// contact_force is the force reported with that observation.
struct StepRecord {
  Image rgb;
  Image tactile;
  Pose proprio;
  Action action;
  double contact_force = 0.0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EpisodeRecord {
  std::string task_id;
  std::string instruction;
  std::uint64_t seed = 0;
  bool success = false;
  bool direct = false;
  double max_force = 0.0;
  std::vector<StepRecord> steps;

  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

struct DemoSet {
  std::map<std::string, std::string> header;  // free-form metadata
  std::vector<EpisodeRecord> episodes;

  friend bool operator==(const DemoSet&, const DemoSet&) = default;
};

// File layout, all integers little-endian:
//   "TVLADEMO" | version u8 | header u32 length + "key=value\n" text
//   per episode: u64 block length + block
//   block: task, instruction (u32 length + bytes), seed u64, success u8,
//          direct u8, max_force f64, step count u32, then per step:
//          rgb u8[h*w*c], tactile u8[h*w*c], proprio 3xf64, action 3xf64, force f64
// Images are stored 8-bit; writing quantizes them.
inline constexpr std::uint8_t kDemoVersion = 1;

std::string encode_episodes(const DemoSet& set);
// Throws FormatError with the byte offset and the failing episode index.
DemoSet decode_episodes(const std::string& bytes);
void write_episodes(const std::filesystem::path& path, const DemoSet& set);
DemoSet read_episodes(const std::filesystem::path& path);

struct CollectConfig {
  std::size_t n_demos = 80;
  double noise_scale = 0.3;
  std::uint64_t seed = 0;
  ResetParams reset;
  std::size_t window = 20;  // attempts per success-rate check
};

// Runs the scripted expert until n_demos successes are recorded; failures
// are discarded. Throws ConfigError if a window of attempts succeeds < 50%.
DemoSet collect_demos(const TaskSpec& task, const CollectConfig& cfg);

// Runs one expert episode and returns its record whether or not it succeeded.
EpisodeRecord run_expert_episode(const TaskSpec& task, std::uint64_t episode_seed, double noise_scale,
                                 const ResetParams& reset);

// Deterministic per-episode seeds derived from a base seed.
std::uint64_t collect_episode_seed(std::uint64_t base_seed, std::size_t index);

// Nearest-rank percentile on an ascending-sorted pool: element ceil(p/100 * n).
double nearest_rank(const std::vector<double>& sorted, double percentile);

// Per-dim 1st/99th percentiles over every action in the set. A dim with
// lo == hi is rejected unless widen_degenerate is set, in which case it
// becomes [lo - 1e-6, hi + 1e-6].
NormStats compute_norm_stats(const DemoSet& set, bool widen_degenerate = false);

// Preprocessed tactile pair for step t of an episode (reference = frame 0).
Image episode_tactile_pair(const EpisodeRecord& ep, std::size_t t);

enum class ProbeTask { Contact, RotationHigh, RotationLow };
const char* probe_task_name(ProbeTask t);
ProbeTask parse_probe_task(const std::string& s);
inline constexpr ProbeTask kProbeTasks[] = {ProbeTask::Contact, ProbeTask::RotationHigh, ProbeTask::RotationLow};

struct ProbeExample {
  Image frame;  // raw gel image
  Image pair;   // preprocessed (older, current) pair
  int label = 0;
  ProbeTask task = ProbeTask::Contact;
};

// Balanced binary set rendered through the tactile model. Each probe task
// draws from its own random stream.
std::vector<ProbeExample> make_probe_dataset(ProbeTask task, std::size_t n, std::uint64_t seed);

}  // namespace tvla
