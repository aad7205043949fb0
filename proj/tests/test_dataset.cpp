#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "tvla/dataset.hpp"
#include "tvla/errors.hpp"

using namespace tvla;

namespace {

EpisodeRecord random_episode(Rng& rng, std::size_t steps) {
  EpisodeRecord ep;
  ep.task_id = "circle3";
  ep.instruction = task_by_id("circle3").instruction;
  ep.seed = rng.next_u64();
  ep.success = rng.bernoulli(0.5);
  ep.direct = rng.bernoulli(0.5);
  ep.max_force = rng.uniform(0.0, 20.0);
  for (std::size_t t = 0; t < steps; ++t) {
    StepRecord s;
    s.rgb = Image(kRgbSize, kRgbSize, 3);
    s.tactile = Image(kTactileSize, kTactileSize, 3);
    for (auto& v : s.rgb.pixels) v = dequantize_u8(static_cast<std::uint8_t>(rng.below(256)));
    for (auto& v : s.tactile.pixels) v = dequantize_u8(static_cast<std::uint8_t>(rng.below(256)));
    s.proprio = {rng.normal(), rng.normal(), rng.normal()};
    s.action = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-0.05, 0.05)};
    s.contact_force = rng.uniform(0.0, 10.0);
    ep.steps.push_back(std::move(s));
  }
  return ep;
}

DemoSet two_episode_set() {
  DemoSet set;
  set.header["task"] = "circle3";
  set.header["note"] = "two episodes";
  const ResetParams reset;
  set.episodes.push_back(run_expert_episode(task_by_id("circle3"), 1, 0.3, reset));
  set.episodes.push_back(run_expert_episode(task_by_id("circle3"), 2, 0.3, reset));
  return set;
}

}  // namespace

TEST(EpisodeFile, TwoEpisodeRoundTrip) {
  const DemoSet set = two_episode_set();
  const auto path = std::filesystem::temp_directory_path() / "tvla_two.demo";
  write_episodes(path, set);
  EXPECT_EQ(read_episodes(path), set);
  std::filesystem::remove(path);
}

TEST(EpisodeFile, RandomizedRoundTrip) {
  Rng rng(5, "episodes");
  for (int trial = 0; trial < 10; ++trial) {
    DemoSet set;
    set.header["trial"] = std::to_string(trial);
    const std::size_t n = rng.below(4);
    for (std::size_t e = 0; e < n; ++e) set.episodes.push_back(random_episode(rng, rng.below(6)));
    EXPECT_EQ(decode_episodes(encode_episodes(set)), set);
  }
}

TEST(EpisodeFile, EmptySetHasReadableHeader) {
  DemoSet set;
  set.header["task"] = "usb";
  const DemoSet back = decode_episodes(encode_episodes(set));
  EXPECT_EQ(back.episodes.size(), 0u);
  EXPECT_EQ(back.header.at("task"), "usb");
}

TEST(EpisodeFile, TruncatedLastBlockNamesEpisode) {
  const std::string bytes = encode_episodes(two_episode_set());
  const std::string cut = bytes.substr(0, bytes.size() - 100);
  try {
    decode_episodes(cut);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("episode 1"), std::string::npos) << e.what();
    EXPECT_GT(e.offset(), 0u);
  }
}

TEST(EpisodeFile, VersionMismatchIsLocated) {
  std::string bytes = encode_episodes(DemoSet{});
  bytes[8] = static_cast<char>(kDemoVersion + 1);
  try {
    decode_episodes(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 8u);
  }
}

TEST(EpisodeFile, BadMagicRejected) {
  EXPECT_THROW(decode_episodes("NOTADEMOFILE"), FormatError);
  EXPECT_THROW(decode_episodes(""), FormatError);
}

TEST(EpisodeFile, StepsShareLength) {
  const DemoSet set = two_episode_set();
  for (const auto& ep : set.episodes) {
    EXPECT_GT(ep.steps.size(), 0u);
    for (const auto& s : ep.steps) {
      EXPECT_EQ(s.rgb.height, kRgbSize);
      EXPECT_EQ(s.tactile.height, kTactileSize);
    }
  }
}

TEST(Collect, EightyWideClearanceSuccesses) {
  CollectConfig cfg;
  cfg.seed = 3;
  const DemoSet set = collect_demos(task_by_id("circle3"), cfg);
  ASSERT_EQ(set.episodes.size(), 80u);
  double steps = 0.0;
  for (const auto& ep : set.episodes) {
    EXPECT_TRUE(ep.success);
    steps += static_cast<double>(ep.steps.size());
  }
  steps /= 80.0;
  EXPECT_GE(steps, 60.0);
  EXPECT_LE(steps, 90.0);
}

TEST(Collect, SameSeedIsByteIdentical) {
  CollectConfig cfg;
  cfg.seed = 9;
  cfg.n_demos = 4;
  EXPECT_EQ(encode_episodes(collect_demos(task_by_id("usb"), cfg)),
            encode_episodes(collect_demos(task_by_id("usb"), cfg)));
}

TEST(Collect, HopelessExpertIsAConfigError) {
  CollectConfig cfg;
  cfg.noise_scale = 6.0;
  cfg.n_demos = 10;
  cfg.window = 10;
  EXPECT_THROW(collect_demos(task_by_id("usb"), cfg), ConfigError);
}

TEST(NormStats, NearestRankMatchesBruteForce) {
  Rng rng(1, "pool");
  for (std::size_t n : {1u, 2u, 7u, 99u, 100u, 101u, 1000u}) {
    std::vector<double> pool(n);
    for (auto& v : pool) v = rng.normal();
    std::sort(pool.begin(), pool.end());
    for (double p : {1.0, 50.0, 99.0}) {
      // Smallest pool value with at least p% of the pool at or below it.
      double oracle = pool.back();
      for (double v : pool) {
        const auto below = std::count_if(pool.begin(), pool.end(), [&](double x) { return x <= v; });
        if (100.0 * static_cast<double>(below) >= p * static_cast<double>(n)) {
          oracle = v;
          break;
        }
      }
      EXPECT_EQ(nearest_rank(pool, p), oracle) << "n " << n << " p " << p;
    }
  }
}

TEST(NormStats, PercentilesOfCollectedActions) {
  const DemoSet set = two_episode_set();
  const NormStats st = compute_norm_stats(set);
  std::vector<double> dx;
  for (const auto& ep : set.episodes) {
    for (const auto& s : ep.steps) dx.push_back(s.action.dx);
  }
  std::sort(dx.begin(), dx.end());
  EXPECT_EQ(st.lo[0], nearest_rank(dx, 1.0));
  EXPECT_EQ(st.hi[0], nearest_rank(dx, 99.0));
}

TEST(NormStats, ConstantDimensionRejected) {
  DemoSet set = two_episode_set();
  for (auto& ep : set.episodes) {
    for (auto& s : ep.steps) s.action.dtheta = 0.0;
  }
  EXPECT_THROW(compute_norm_stats(set), PreconditionError);
}

TEST(NormStats, SingleActionWidenedInTestMode) {
  DemoSet set;
  EpisodeRecord ep;
  StepRecord s;
  s.action = {0.5, 0.5, 0.5};
  ep.steps.push_back(s);
  set.episodes.push_back(ep);
  EXPECT_THROW(compute_norm_stats(set), PreconditionError);
  const NormStats st = compute_norm_stats(set, true);
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_EQ(st.lo[d], 0.5 - 1e-6);
    EXPECT_EQ(st.hi[d], 0.5 + 1e-6);
  }
}

TEST(NormStats, EmptySetRejected) { EXPECT_THROW(compute_norm_stats(DemoSet{}), PreconditionError); }

TEST(NormStats, InRangeActionsRoundTripWithinHalfBin) {
  const DemoSet set = two_episode_set();
  const NormStats st = compute_norm_stats(set);
  const VocabLayout vocab;
  for (const auto& ep : set.episodes) {
    for (const auto& s : ep.steps) {
      const double a[3] = {s.action.dx, s.action.dz, s.action.dtheta};
      const auto back = detokenize_action(tokenize_action(a, st, vocab), st, vocab);
      for (std::size_t d = 0; d < 3; ++d) {
        if (a[d] < st.lo[d] || a[d] > st.hi[d]) continue;
        const double half_bin = (st.hi[d] - st.lo[d]) / static_cast<double>(vocab.action_bins) / 2.0;
        EXPECT_LE(std::abs(back[d] - a[d]), half_bin * (1.0 + 1e-9));
      }
    }
  }
}

TEST(TactilePair, UsesFrameZeroAsBackground) {
  const DemoSet set = two_episode_set();
  const Image p = episode_tactile_pair(set.episodes[0], 0);
  EXPECT_EQ(p.channels, 6u);
  for (double v : p.pixels) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(episode_tactile_pair(set.episodes[0], 100000), IndexError);
}

TEST(Probe, BalancedAtTwoThousand) {
  for (ProbeTask t : kProbeTasks) {
    const auto set = make_probe_dataset(t, 2000, 4);
    ASSERT_EQ(set.size(), 2000u);
    const auto pos = std::count_if(set.begin(), set.end(), [](const ProbeExample& e) { return e.label == 1; });
    EXPECT_EQ(pos, 1000);
  }
}

TEST(Probe, ContactNegativesAreReference) {
  const auto set = make_probe_dataset(ProbeTask::Contact, 400, 4);
  for (const auto& e : set) {
    if (e.label == 0) {
      EXPECT_EQ(e.frame, tactile_reference());
    } else {
      EXPECT_NE(e.frame, tactile_reference());
    }
  }
}

TEST(Probe, SameSeedIsIdentical) {
  const auto a = make_probe_dataset(ProbeTask::RotationLow, 200, 8);
  const auto b = make_probe_dataset(ProbeTask::RotationLow, 200, 8);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].pair, b[i].pair);
    EXPECT_EQ(a[i].label, b[i].label);
  }
}

TEST(Probe, TasksUseSeparateStreams) {
  const auto hi = make_probe_dataset(ProbeTask::RotationHigh, 2, 8);
  const auto lo = make_probe_dataset(ProbeTask::RotationLow, 2, 8);
  EXPECT_NE(hi[0].frame, lo[0].frame);
  EXPECT_NE(Rng(8, "probe/contact").next_u64(), Rng(8, "collect").next_u64());
  EXPECT_THROW(make_probe_dataset(ProbeTask::Contact, 3, 0), PreconditionError);
  EXPECT_EQ(parse_probe_task("rotation_high"), ProbeTask::RotationHigh);
  EXPECT_THROW(parse_probe_task("slip"), LookupError);
}
