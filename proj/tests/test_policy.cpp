#include <gtest/gtest.h>

#include <cmath>

#include "tvla/errors.hpp"
#include "tvla/gradcheck.hpp"
#include "tvla/ops.hpp"
#include "tvla/optim.hpp"
#include "tvla/policy.hpp"

using namespace tvla;

namespace {

Image random_image(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  Image im(h, w, c);
  for (auto& v : im.pixels) v = rng.uniform();
  return im;
}

NormStats unit_stats() { return NormStats{{-1, -1, -1}, {1, 1, 1}}; }

struct TinyInputs {
  std::vector<Image> rgb;
  std::vector<Image> tactile;
  std::vector<int> text = {1, 2, 3};
  PolicyBatch batch(const std::vector<std::vector<int>>& actions) const {
    PolicyBatch b;
    for (std::size_t i = 0; i < rgb.size(); ++i) b.inputs.push_back({&rgb[i], &tactile[i], text});
    b.actions = actions;
    return b;
  }
};

TinyInputs tiny_inputs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed, "inputs");
  TinyInputs in;
  for (std::size_t i = 0; i < n; ++i) {
    in.rgb.push_back(random_image(16, 16, 3, rng));
    in.tactile.push_back(random_image(16, 16, 6, rng));
  }
  return in;
}

std::size_t measured_length(const Policy& p, const PolicyBatch& b) {
  const std::size_t prefix = p.encode_prefix(b).value().rows() / b.inputs.size();
  return prefix + 1 + b.inputs[0].text.size() + b.actions[0].size();
}

}  // namespace

TEST(Tokenize, BinCentresOnUnitRange) {
  const VocabLayout vocab;
  const NormStats st = unit_stats();
  const int mid = vocab.action_begin() + 128;
  const std::vector<int> t = {mid, vocab.action_begin(), vocab.action_end() - 1};
  const auto a = detokenize_action(t, st, vocab);
  EXPECT_DOUBLE_EQ(a[0], 0.00390625);
  EXPECT_DOUBLE_EQ(a[1], -0.99609375);
  EXPECT_DOUBLE_EQ(a[2], 0.99609375);
}

TEST(Tokenize, EndpointsAndClamping) {
  const VocabLayout vocab;
  const NormStats st = unit_stats();
  const double a[3] = {-1.0, 1.0, 0.0};
  const auto t = tokenize_action(a, st, vocab);
  EXPECT_EQ(t[0], vocab.action_begin());
  EXPECT_EQ(t[1], vocab.action_end() - 1);
  EXPECT_EQ(t[2], vocab.action_begin() + 128);
  const double out[3] = {-7.0, 9.0, 1e9};
  const auto c = tokenize_action(out, st, vocab);
  EXPECT_EQ(c[0], vocab.action_begin());
  EXPECT_EQ(c[1], vocab.action_end() - 1);
  EXPECT_EQ(c[2], vocab.action_end() - 1);
}

TEST(Tokenize, NonActionIdIsDecodeError) {
  const VocabLayout vocab;
  const std::vector<int> t = {5, vocab.action_begin(), vocab.action_begin()};
  EXPECT_THROW(detokenize_action(t, unit_stats(), vocab), DecodeError);
  const std::vector<int> b = {vocab.bos(), vocab.action_begin(), vocab.action_begin()};
  EXPECT_THROW(detokenize_action(b, unit_stats(), vocab), DecodeError);
}

TEST(Tokenize, RandomRoundTripWithinHalfBin) {
  const VocabLayout vocab;
  Rng rng(1, "tok");
  for (int trial = 0; trial < 2000; ++trial) {
    NormStats st;
    for (int d = 0; d < 3; ++d) {
      const double lo = rng.uniform(-5, 5);
      st.lo.push_back(lo);
      st.hi.push_back(lo + rng.uniform(0.01, 4));
    }
    double a[3];
    for (int d = 0; d < 3; ++d) a[d] = rng.uniform(st.lo[d], st.hi[d]);
    const auto back = detokenize_action(tokenize_action(a, st, vocab), st, vocab);
    for (int d = 0; d < 3; ++d) {
      const double half = (st.hi[d] - st.lo[d]) / 256.0 / 2.0;
      EXPECT_LE(std::abs(back[d] - a[d]), half * (1.0 + 1e-9));
    }
  }
}

TEST(Greedy, TiesGoToLowestActionId) {
  const VocabLayout vocab{16, 8};
  std::vector<double> logits(vocab.size(), 0.0);
  EXPECT_EQ(greedy_action_token(logits, vocab), vocab.action_begin());
  logits[static_cast<std::size_t>(vocab.action_begin() + 5)] = 2.0;
  logits[static_cast<std::size_t>(vocab.action_begin() + 3)] = 2.0;
  EXPECT_EQ(greedy_action_token(logits, vocab), vocab.action_begin() + 3);
}

TEST(Greedy, NonActionMaximumIsMasked) {
  const VocabLayout vocab{16, 8};
  std::vector<double> logits(vocab.size(), -1.0);
  logits[2] = 100.0;
  logits[static_cast<std::size_t>(vocab.eos())] = 50.0;
  logits[static_cast<std::size_t>(vocab.action_begin() + 6)] = 0.5;
  EXPECT_EQ(greedy_action_token(logits, vocab), vocab.action_begin() + 6);
}

TEST(Build, SameSeedSharesBaseChecksums) {
  const Policy vis = Policy::build(PolicyConfig::tiny(Variant::VisionOnly), 11);
  const Policy film = Policy::build(PolicyConfig::tiny(Variant::TacFiLM), 11);
  const Policy cat = Policy::build(PolicyConfig::tiny(Variant::TactileConcat), 11);
  const auto base = vis.checksums();
  for (const Policy* p : {&film, &cat}) {
    const auto sums = p->checksums();
    for (const auto& [name, sum] : base) {
      ASSERT_TRUE(sums.count(name)) << name;
      EXPECT_EQ(sums.at(name), sum) << name;
    }
  }
  EXPECT_NE(Policy::build(PolicyConfig::tiny(Variant::VisionOnly), 12).checksums(), base);
}

TEST(Build, FilmGeneratorCounts) {
  PolicyConfig c;
  c.variant = Variant::TacFiLM;
  c.vision.blocks = 6;
  c.lm_blocks = 1;
  EXPECT_EQ(Policy::build(c, 1).film_generator_count(), 12u);
  c.depth = DepthVariant::Early;
  EXPECT_EQ(Policy::build(c, 1).film_generator_count(), 4u);
  c.variant = Variant::VisionOnly;
  EXPECT_EQ(Policy::build(c, 1).film_generator_count(), 0u);
}

TEST(Build, InvalidConfigRejected) {
  PolicyConfig c = PolicyConfig::tiny(Variant::TacFiLM);
  c.lm_heads = 3;
  EXPECT_THROW(Policy::build(c, 1), ConfigError);
}

TEST(SequenceLength, DefaultDimensionsMeasured) {
  Rng rng(2, "img");
  const Image rgb = random_image(48, 48, 3, rng);
  const Image tac = random_image(32, 32, 6, rng);
  std::map<Variant, std::size_t> len;
  for (Variant v : {Variant::VisionOnly, Variant::TacFiLM, Variant::TactileConcat}) {
    PolicyConfig c;
    c.variant = v;
    c.vision.blocks = 1;
    c.tactile.blocks = 1;
    c.lm_blocks = 1;
    const Policy p = Policy::build(c, 3);
    for (std::size_t text_len : {3u, 9u}) {
      const std::vector<int> text(text_len, 1);
      PolicyBatch b;
      b.inputs.push_back({&rgb, &tac, text});
      b.actions = {{}};
      const std::size_t n = measured_length(p, b);
      EXPECT_EQ(n, p.sequence_length(text_len, 0));
      if (text_len == 9) len[v] = n;
    }
  }
  EXPECT_EQ(len[Variant::VisionOnly], 36u + 1u + 9u);
  EXPECT_EQ(len[Variant::TacFiLM], len[Variant::VisionOnly]);
  EXPECT_EQ(len[Variant::TactileConcat], len[Variant::VisionOnly] + 16u);
}

TEST(SequenceLength, OverflowIsLengthError) {
  const Policy p = Policy::build(PolicyConfig::tiny(Variant::TactileConcat), 4);
  const TinyInputs in = tiny_inputs(1, 5);
  PolicyBatch b = in.batch({{}});
  const std::vector<int> long_text(40, 1);
  b.inputs[0].text = long_text;
  EXPECT_THROW(p.next_logits(b), LengthError);
}

TEST(Forward, LogitShapesAndFiniteness) {
  const Policy p = Policy::build(PolicyConfig::tiny(Variant::TacFiLM), 6);
  const TinyInputs in = tiny_inputs(2, 7);
  const int a0 = p.config().vocab.action_begin();
  const Tensor out = p.forward(in.batch({{a0, a0 + 1, a0 + 2}, {a0 + 3, a0, a0}})).value();
  EXPECT_EQ(out.shape(), (Shape{6, p.config().vocab.size()}));
  for (double v : out.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, FreshFilmMatchesVisionOnly) {
  const Policy vis = Policy::build(PolicyConfig::tiny(Variant::VisionOnly), 8);
  const Policy film = Policy::build(PolicyConfig::tiny(Variant::TacFiLM), 8);
  const TinyInputs in = tiny_inputs(2, 9);
  const int a0 = vis.config().vocab.action_begin();
  const auto b = in.batch({{a0, a0 + 4}, {a0 + 1, a0 + 7}});
  EXPECT_EQ(film.forward(b).value(), vis.forward(b).value());
}

TEST(Forward, CausalInActionTokens) {
  const Policy p = Policy::build(PolicyConfig::tiny(Variant::TactileConcat), 10);
  const TinyInputs in = tiny_inputs(1, 11);
  const int a0 = p.config().vocab.action_begin();
  const Tensor base = p.forward(in.batch({{a0, a0 + 1, a0 + 2}})).value();
  const Tensor late = p.forward(in.batch({{a0, a0 + 1, a0 + 7}})).value();
  const Tensor mid = p.forward(in.batch({{a0, a0 + 6, a0 + 7}})).value();
  const std::size_t v = p.config().vocab.size();
  for (std::size_t j = 0; j < v; ++j) {
    EXPECT_EQ(late.at(0, j), base.at(0, j));
    EXPECT_EQ(late.at(1, j), base.at(1, j));
    EXPECT_EQ(late.at(2, j), base.at(2, j));
    EXPECT_EQ(mid.at(0, j), base.at(0, j));
    EXPECT_EQ(mid.at(1, j), base.at(1, j));
  }
  bool changed = false;
  for (std::size_t j = 0; j < v; ++j) changed |= mid.at(2, j) != base.at(2, j);
  EXPECT_TRUE(changed);
}

TEST(Forward, NextLogitsMatchTeacherForcedRow) {
  const Policy p = Policy::build(PolicyConfig::tiny(Variant::TacFiLM), 12);
  const TinyInputs in = tiny_inputs(1, 13);
  const int a0 = p.config().vocab.action_begin();
  const Tensor tf = p.forward(in.batch({{a0 + 2, a0 + 5, a0}})).value();
  const Tensor next = p.next_logits(in.batch({{a0 + 2, a0 + 5}})).value();
  for (std::size_t j = 0; j < p.config().vocab.size(); ++j) EXPECT_NEAR(next.at(0, j), tf.at(2, j), 1e-12);
}

TEST(Forward, EndToEndGradientCheck) {
  for (Variant v : {Variant::TacFiLM, Variant::TactileConcat}) {
    PolicyConfig c = PolicyConfig::tiny(v);
    c.vision.blocks = 1;
    c.tactile.blocks = 1;
    c.lm_blocks = 1;
    Policy p = Policy::build(c, 14);
    Rng rng(15, "perturb");
    for (const auto& prm : p.registry().all()) {
      if (prm->name.starts_with("film.")) {
        for (auto& x : prm->mutable_value().values()) x += 0.1 * rng.normal();
      }
    }
    const TinyInputs in = tiny_inputs(1, 16);
    const int a0 = c.vocab.action_begin();
    const auto b = in.batch({{a0 + 1, a0 + 3}});
    const std::vector<int> targets = {a0 + 3, a0 + 6};
    auto f = [&] { return ops::softmax_cross_entropy(p.forward(b), targets); };
    EXPECT_LT(grad_check(f, std::span<const ParamPtr>(p.registry().all())), 1e-4) << variant_name(v);
  }
}

TEST(Predict, EmitsThreeInRangeValues) {
  Policy p = Policy::build(PolicyConfig::tiny(Variant::TacFiLM), 17);
  p.set_norm_stats(NormStats{{-2, -2, -0.05}, {2, 2, 0.05}});
  const TinyInputs in = tiny_inputs(1, 18);
  const PolicyInput input{&in.rgb[0], &in.tactile[0], in.text};
  const auto tokens = p.predict_tokens(input);
  ASSERT_EQ(tokens.size(), 3u);
  for (int t : tokens) EXPECT_TRUE(p.config().vocab.is_action(t));
  const auto a = p.predict_action(input);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_LE(std::abs(a[0]), 2.0);
  EXPECT_LE(std::abs(a[2]), 0.05);
  EXPECT_EQ(p.predict_action(input), a);
  const TactileFeatures cache = p.tactile_features(in.tactile[0]);
  EXPECT_EQ(p.predict_action(input, &cache), a);
}

TEST(Training, TactileSignalReachesLogitsAfterUpdates) {
  Policy p = Policy::build(PolicyConfig::tiny(Variant::TacFiLM), 19);
  Rng rng(20, "data");
  const TinyInputs in = tiny_inputs(4, 21);
  const int a0 = p.config().vocab.action_begin();
  const auto b = in.batch({{a0}, {a0 + 7}, {a0 + 2}, {a0 + 5}});
  const std::vector<int> targets = {a0 + 1, a0 + 6, a0 + 3, a0 + 4};
  const auto params = p.trainable();
  AdamState adam;
  adam.lr = 1e-2;
  for (int step = 0; step < 100; ++step) {
    zero_grad(params);
    backward(ops::softmax_cross_entropy(p.forward(b), targets));
    adam_step(params, adam);
  }
  TinyInputs other = in;
  for (auto& t : other.tactile) {
    for (auto& v : t.pixels) v = rng.uniform();
  }
  const Tensor x = p.forward(b).value();
  const Tensor y = p.forward(other.batch(b.actions)).value();
  double diff = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) diff = std::max(diff, std::abs(x[i] - y[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Lora, SquareDecoderLinearAddsRankTimesWidths) {
  PolicyConfig c;
  c.variant = Variant::VisionOnly;
  c.vision.blocks = 1;
  c.lm_blocks = 1;
  Policy p = Policy::build(c, 22);
  LoraConfig lc;
  lc.targets = {"decoder.block0.attn.q"};
  lc.rank = 8;
  EXPECT_EQ(p.lora_wrap(lc, 1), 1536u);
  EXPECT_EQ(p.lora_parameter_count(), 1536u);
}

TEST(Lora, CountMatchesMatchedLinears) {
  Policy p = Policy::build(PolicyConfig::tiny(Variant::TacFiLM), 23);
  LoraConfig lc;
  lc.rank = 2;
  std::size_t expect = 0;
  for (const auto& lin : p.registry().linears()) {
    for (const auto& pat : lc.targets) {
      if (glob_match(pat, lin->name)) {
        expect += 2 * (lin->in() + lin->out());
        break;
      }
    }
  }
  EXPECT_EQ(p.lora_wrap(lc, 2), expect);
  EXPECT_GT(expect, 0u);
}

TEST(Lora, WrapIsIdentityAndFreezesBase) {
  Policy p = Policy::build(PolicyConfig::tiny(Variant::TacFiLM), 24);
  const TinyInputs in = tiny_inputs(2, 25);
  const int a0 = p.config().vocab.action_begin();
  const auto b = in.batch({{a0, a0 + 1}, {a0 + 2, a0 + 3}});
  const Tensor before = p.forward(b).value();
  p.lora_wrap(LoraConfig{}, 3);
  EXPECT_EQ(p.forward(b).value(), before);
  for (const auto& prm : p.registry().all()) {
    const bool expect_trainable = prm->name.starts_with("film.") || prm->name == "decoder.tok_embed" ||
                                  prm->name.ends_with(".lora_a") || prm->name.ends_with(".lora_b");
    EXPECT_EQ(!prm->frozen(), expect_trainable) << prm->name;
  }
}

TEST(Lora, MergeMatchesAdaptedForward) {
  Policy p = Policy::build(PolicyConfig::tiny(Variant::TactileConcat), 26);
  p.lora_wrap(LoraConfig{}, 4);
  Rng rng(27, "b");
  for (const auto& prm : p.registry().all()) {
    if (prm->name.ends_with(".lora_b")) {
      for (auto& v : prm->mutable_value().values()) v = 0.1 * rng.normal();
    }
  }
  const TinyInputs in = tiny_inputs(2, 28);
  const int a0 = p.config().vocab.action_begin();
  const auto b = in.batch({{a0 + 4}, {a0 + 1}});
  const Tensor adapted = p.forward(b).value();
  p.lora_merge();
  EXPECT_EQ(p.lora_state(), LoraState::Merged);
  EXPECT_EQ(p.lora_parameter_count(), 0u);
  const Tensor merged = p.forward(b).value();
  for (std::size_t i = 0; i < adapted.size(); ++i) EXPECT_NEAR(merged[i], adapted[i], 1e-10);
  EXPECT_THROW(p.lora_merge(), StateError);
}

TEST(Lora, MisuseErrors) {
  Policy p = Policy::build(PolicyConfig::tiny(Variant::TacFiLM), 29);
  EXPECT_THROW(p.lora_merge(), StateError);
  LoraConfig bad;
  bad.targets = {"nothing.*"};
  EXPECT_THROW(p.lora_wrap(bad, 1), ConfigError);
  p.lora_wrap(LoraConfig{}, 1);
  EXPECT_THROW(p.lora_wrap(LoraConfig{}, 1), StateError);
}

TEST(Lora, OnlyAdaptersAndFusionMoveDuringTraining) {
  Policy p = Policy::build(PolicyConfig::tiny(Variant::TacFiLM), 30);
  p.lora_wrap(LoraConfig{}, 5);
  const auto before = p.checksums();
  const TinyInputs in = tiny_inputs(2, 31);
  const int a0 = p.config().vocab.action_begin();
  const auto b = in.batch({{a0}, {a0 + 1}});
  const auto params = p.trainable();
  AdamState adam;
  adam.lr = 1e-2;
  for (int step = 0; step < 3; ++step) {
    zero_grad(params);
    backward(ops::softmax_cross_entropy(p.forward(b), std::vector<int>{a0 + 5, a0 + 2}));
    adam_step(params, adam);
  }
  for (const auto& [name, sum] : p.checksums()) {
    const auto prm = p.registry().find(name);
    if (!prm->frozen()) continue;
    EXPECT_EQ(sum, before.at(name)) << name;
  }
}

TEST(Glob, StarMatchesRuns) {
  EXPECT_TRUE(glob_match("vision.*.attn.*", "vision.a.block0.attn.q"));
  EXPECT_FALSE(glob_match("vision.*.attn.*", "decoder.block0.attn.q"));
  EXPECT_TRUE(glob_match("*", ""));
  EXPECT_FALSE(glob_match("a", ""));
}

TEST(PolicyCheckpoint, RoundTripIsBitExact) {
  Policy p = Policy::build(PolicyConfig::tiny(Variant::TacFiLM), 32);
  p.set_norm_stats(NormStats{{-1.25, -2, -0.05}, {1.5, 2, 0.0625}});
  p.lora_wrap(LoraConfig{}, 6);
  Rng rng(33, "b");
  for (const auto& prm : p.registry().all()) {
    if (prm->name.ends_with(".lora_b")) {
      for (auto& v : prm->mutable_value().values()) v = rng.normal();
    }
  }
  const Policy q = Policy::from_checkpoint(decode_checkpoint(encode_checkpoint(p.to_checkpoint())));
  EXPECT_EQ(q.checksums(), p.checksums());
  EXPECT_EQ(q.norm_stats().lo, p.norm_stats().lo);
  EXPECT_EQ(q.norm_stats().hi, p.norm_stats().hi);
  EXPECT_EQ(q.lora_state(), LoraState::Wrapped);
  const TinyInputs in = tiny_inputs(1, 34);
  const int a0 = p.config().vocab.action_begin();
  const auto b = in.batch({{a0 + 3}});
  EXPECT_EQ(q.forward(b).value(), p.forward(b).value());
  for (const auto& prm : q.registry().all()) {
    EXPECT_EQ(prm->frozen(), p.registry().find(prm->name)->frozen()) << prm->name;
  }
}
