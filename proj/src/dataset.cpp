#include "tvla/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tvla/encoders.hpp"
#include "tvla/errors.hpp"
#include "tvla/rng.hpp"

namespace tvla {

namespace {

constexpr char kMagic[8] = {'T', 'V', 'L', 'A', 'D', 'E', 'M', 'O'};

static_assert(std::endian::native == std::endian::little, "demo files are written little-endian");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void image(const Image& im) {
    for (double v : im.pixels) u8(quantize_u8(v));
  }
  std::string take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& b, std::size_t pos, std::size_t end) : b_(b), pos_(pos), end_(end) {}

  void need(std::size_t n, const char* what) {
    if (end_ - pos_ < n) fail(std::string("truncated ") + what);
  }
  void bytes(void* p, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    bytes(&v, 4, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    bytes(&v, 8, what);
    return v;
  }
  double f64(const char* what) {
    double v;
    bytes(&v, 8, what);
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Image image(std::size_t h, std::size_t w, std::size_t c, const char* what) {
    Image im(h, w, c);
    need(im.size(), what);
    for (std::size_t i = 0; i < im.size(); ++i) {
      im.pixels[i] = dequantize_u8(static_cast<std::uint8_t>(b_[pos_ + i]));
    }
    pos_ += im.size();
    return im;
  }

  std::size_t pos() const { return pos_; }
  std::size_t end() const { return end_; }
  void set_context(std::string c) { context_ = std::move(c); }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(context_.empty() ? what : context_ + ": " + what, pos_);
  }

 private:
  const std::string& b_;
  std::size_t pos_;
  std::size_t end_;
  std::string context_;
};

std::size_t header_size(const std::map<std::string, std::string>& h, const char* key, std::size_t fallback) {
  auto it = h.find(key);
  if (it == h.end()) return fallback;
  return static_cast<std::size_t>(std::stoull(it->second));
}

void write_pose(Writer& w, const Pose& p) {
  w.f64(p.x);
  w.f64(p.z);
  w.f64(p.theta);
}

}  // namespace

std::string encode_episodes(const DemoSet& set) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u8(kDemoVersion);

  std::map<std::string, std::string> header = set.header;
  std::size_t rgb = kRgbSize, tac = kTactileSize;
  if (!set.episodes.empty() && !set.episodes.front().steps.empty()) {
    rgb = set.episodes.front().steps.front().rgb.height;
    tac = set.episodes.front().steps.front().tactile.height;
  }
  header["rgb_size"] = std::to_string(rgb);
  header["tactile_size"] = std::to_string(tac);
  header["episodes"] = std::to_string(set.episodes.size());
  std::string text;
  for (const auto& [k, v] : header) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("demo header entry '" + k + "' cannot be stored as key=value text");
    }
    text += k + "=" + v + "\n";
  }
  w.str(text);

  for (std::size_t e = 0; e < set.episodes.size(); ++e) {
    const EpisodeRecord& ep = set.episodes[e];
    Writer b;
    b.str(ep.task_id);
    b.str(ep.instruction);
    b.u64(ep.seed);
    b.u8(ep.success ? 1 : 0);
    b.u8(ep.direct ? 1 : 0);
    b.f64(ep.max_force);
    b.u32(static_cast<std::uint32_t>(ep.steps.size()));
    for (const StepRecord& s : ep.steps) {
      if (s.rgb.height != rgb || s.rgb.width != rgb || s.rgb.channels != 3 || s.tactile.height != tac ||
          s.tactile.width != tac || s.tactile.channels != 3) {
        throw DimensionError("episode " + std::to_string(e) + " has frames of a different size");
      }
      b.image(s.rgb);
      b.image(s.tactile);
      write_pose(b, s.proprio);
      b.f64(s.action.dx);
      b.f64(s.action.dz);
      b.f64(s.action.dtheta);
      b.f64(s.contact_force);
    }
    const std::string block = b.take();
    w.u64(block.size());
    w.bytes(block.data(), block.size());
  }
  return w.take();
}

DemoSet decode_episodes(const std::string& bytes) {
  Reader r(bytes, 0, bytes.size());
  char magic[8];
  r.bytes(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError("not a TVLADEMO file", 0);
  const std::uint8_t version = r.u8("version");
  if (version != kDemoVersion) {
    throw FormatError("unsupported demo version " + std::to_string(version), 8);
  }
  DemoSet set;
  std::istringstream text(r.str("header"));
  for (std::string line; std::getline(text, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) r.fail("header line without '='");
    set.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const std::size_t rgb = header_size(set.header, "rgb_size", kRgbSize);
  const std::size_t tac = header_size(set.header, "tactile_size", kTactileSize);
  const std::size_t count = header_size(set.header, "episodes", 0);
  set.header.erase("rgb_size");
  set.header.erase("tactile_size");
  set.header.erase("episodes");

  std::size_t pos = r.pos();
  for (std::size_t e = 0; e < count; ++e) {
    Reader len(bytes, pos, bytes.size());
    len.set_context("episode " + std::to_string(e));
    const std::uint64_t n = len.u64("block length");
    len.need(n, "episode block");
    Reader b(bytes, len.pos(), len.pos() + n);
    b.set_context("episode " + std::to_string(e));
    EpisodeRecord ep;
    ep.task_id = b.str("task id");
    ep.instruction = b.str("instruction");
    ep.seed = b.u64("seed");
    ep.success = b.u8("success") != 0;
    ep.direct = b.u8("direct") != 0;
    ep.max_force = b.f64("max force");
    const std::uint32_t steps = b.u32("step count");
    ep.steps.reserve(steps);
    for (std::uint32_t t = 0; t < steps; ++t) {
      StepRecord s;
      s.rgb = b.image(rgb, rgb, 3, "rgb frame");
      s.tactile = b.image(tac, tac, 3, "tactile frame");
      s.proprio.x = b.f64("proprio");
      s.proprio.z = b.f64("proprio");
      s.proprio.theta = b.f64("proprio");
      s.action.dx = b.f64("action");
      s.action.dz = b.f64("action");
      s.action.dtheta = b.f64("action");
      s.contact_force = b.f64("force");
      ep.steps.push_back(std::move(s));
    }
    if (b.pos() != b.end()) b.fail("trailing bytes in episode block");
    set.episodes.push_back(std::move(ep));
    pos = b.end();
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after last episode", pos);
  return set;
}

void write_episodes(const std::filesystem::path& path, const DemoSet& set) {
  const std::string bytes = encode_episodes(set);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ConfigError("failed writing " + path.string());
}

DemoSet read_episodes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LookupError("cannot open demo file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_episodes(ss.str());
}

std::uint64_t collect_episode_seed(std::uint64_t base_seed, std::size_t index) {
  return splitmix64(base_seed ^ splitmix64(fnv1a("collect") + index));
}

EpisodeRecord run_expert_episode(const TaskSpec& task, std::uint64_t episode_seed, double noise_scale,
                                 const ResetParams& reset) {
  PegInsertionEnv env(task, reset);
  Observation obs = env.reset(episode_seed);
  ScriptedExpert expert(task, noise_scale, episode_seed);
  EpisodeRecord ep;
  ep.task_id = task.id;
  ep.instruction = task.instruction;
  ep.seed = episode_seed;
  std::vector<TraceStep> trace;
  StepInfo last;
  while (!env.state().terminated) {
    const Action a = clamp_action(expert.act(env.state(), last));
    ep.steps.push_back(StepRecord{quantized(obs.rgb), quantized(obs.tactile), obs.proprio, a, obs.contact_force});
    StepResult res = env.step(a);
    trace.push_back({env.state().pose, res.info});
    last = res.info;
    obs = std::move(res.obs);
  }
  const EpisodeOutcome out = episode_outcome(trace, task.depth_required);
  ep.success = out.success;
  ep.direct = out.direct;
  ep.max_force = out.max_force;
  return ep;
}

DemoSet collect_demos(const TaskSpec& task, const CollectConfig& cfg) {
  if (cfg.window == 0) throw ConfigError("collect: window must be positive");
  DemoSet set;
  set.header["task"] = task.id;
  set.header["noise_scale"] = std::to_string(cfg.noise_scale);
  set.header["seed"] = std::to_string(cfg.seed);
  std::size_t attempts = 0, window_ok = 0, window_n = 0;
  while (set.episodes.size() < cfg.n_demos) {
    EpisodeRecord ep = run_expert_episode(task, collect_episode_seed(cfg.seed, attempts), cfg.noise_scale, cfg.reset);
    ++attempts;
    ++window_n;
    if (ep.success) {
      ++window_ok;
      set.episodes.push_back(std::move(ep));
    }
    if (window_n == cfg.window) {
      if (2 * window_ok < window_n) {
        throw ConfigError("expert success rate " + std::to_string(window_ok) + "/" + std::to_string(window_n) +
                          " is below 50% on task " + task.id);
      }
      window_ok = window_n = 0;
    }
  }
  set.header["attempts"] = std::to_string(attempts);
  return set;
}

double nearest_rank(const std::vector<double>& sorted, double percentile) {
  if (sorted.empty()) throw PreconditionError("nearest_rank: empty pool");
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

NormStats compute_norm_stats(const DemoSet& set, bool widen_degenerate) {
  std::vector<double> dims[3];
  for (const auto& ep : set.episodes) {
    for (const auto& s : ep.steps) {
      dims[0].push_back(s.action.dx);
      dims[1].push_back(s.action.dz);
      dims[2].push_back(s.action.dtheta);
    }
  }
  if (dims[0].empty()) throw PreconditionError("compute_norm_stats: no actions in the demo set");
  NormStats st;
  for (std::size_t d = 0; d < 3; ++d) {
    std::sort(dims[d].begin(), dims[d].end());
    double lo = nearest_rank(dims[d], 1.0);
    double hi = nearest_rank(dims[d], 99.0);
    if (lo == hi && widen_degenerate) {
      lo -= 1e-6;
      hi += 1e-6;
    }
    st.lo.push_back(lo);
    st.hi.push_back(hi);
  }
  st.validate();
  return st;
}

Image episode_tactile_pair(const EpisodeRecord& ep, std::size_t t) {
  if (t >= ep.steps.size()) throw IndexError("episode_tactile_pair: step out of range");
  const Image& bg = ep.steps.front().tactile;
  if (t == 0) return tactile_preprocess(std::span<const Image>(&ep.steps[0].tactile, 1), 0, bg, kTactileSize);
  const std::size_t older = t >= kTactileFrameGap ? t - kTactileFrameGap : 0;
  const Image pair[2] = {ep.steps[older].tactile, ep.steps[t].tactile};
  return tactile_preprocess(pair, 1, bg, kTactileSize);
}

const char* probe_task_name(ProbeTask t) {
  switch (t) {
    case ProbeTask::Contact: return "contact";
    case ProbeTask::RotationHigh: return "rotation_high";
    case ProbeTask::RotationLow: return "rotation_low";
  }
  return "?";
}

ProbeTask parse_probe_task(const std::string& s) {
  for (ProbeTask t : kProbeTasks) {
    if (s == probe_task_name(t)) return t;
  }
  throw LookupError("unknown probe task '" + s + "' (contact, rotation_high, rotation_low)");
}

std::vector<ProbeExample> make_probe_dataset(ProbeTask task, std::size_t n, std::uint64_t seed) {
  if (n % 2 != 0) throw PreconditionError("make_probe_dataset: n must be even for a balanced set");
  Rng rng(seed, std::string("probe/") + probe_task_name(task));
  const TaskSpec& spec = task_by_id("circle3");
  const double half = spec.peg.width() / 2.0;
  std::vector<ProbeExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    SimState s;
    s.task = spec;
    StepInfo info;
    if (task == ProbeTask::Contact) {
      s.pose.theta = rng.uniform(-0.15, 0.15);
      const double force = rng.uniform(2.0, 15.0);
      const double px = rng.uniform(-half, half);
      const double pz = rng.uniform(0.0, 3.0);
      const double dir = rng.uniform(0.0, 2.0 * M_PI);
      const double slip = rng.uniform(0.0, 1.0);
      if (label == 1) {
        info.contact_force = force;
        info.contact_flag = true;
        info.contact_point = {px, pz};
        info.shear = {slip * std::cos(dir), slip * std::sin(dir)};
      }
    } else {
      // Held peg pressed along its axis: the imprint's long axis follows the
      // in-hand rotation.
      const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      const double tilt = task == ProbeTask::RotationHigh ? rng.uniform(0.10, 0.15) : rng.uniform(0.03, 0.06);
      const double flat = rng.uniform(-0.01, 0.01);
      s.pose.theta = label == 1 ? sign * tilt : flat;
      info.contact_force = rng.uniform(4.0, 15.0);
      info.contact_flag = true;
      info.contact_point = {rng.uniform(-half + 1.0, half - 1.0), rng.uniform(0.0, 2.0)};
      info.shear = {0.0, rng.uniform(0.8, 1.0)};
    }
    ProbeExample ex;
    ex.frame = render_tactile(s, info);
    const Image hist[1] = {ex.frame};
    ex.pair = tactile_preprocess(hist, 0, tactile_reference(), kTactileSize);
    ex.label = label;
    ex.task = task;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace tvla
