#include "tvla/policy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "tvla/errors.hpp"
#include "tvla/ops.hpp"

namespace tvla {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::VisionOnly: return "vision_only";
    case Variant::TactileConcat: return "tactile_concat";
    case Variant::TacFiLM: return "tacfilm";
  }
  return "vision_only";
}

Variant parse_variant(const std::string& s) {
  if (s == "vision_only") return Variant::VisionOnly;
  if (s == "tactile_concat") return Variant::TactileConcat;
  if (s == "tacfilm") return Variant::TacFiLM;
  throw ConfigError("unknown variant '" + s + "' (expected vision_only|tactile_concat|tacfilm)");
}

WordVocab::WordVocab(std::vector<std::string> words) : words_(std::move(words)) {}

const WordVocab& WordVocab::builtin() {
  static const WordVocab vocab({"<unk>", "insert", "the", "circle", "square", "pentagon", "peg", "into", "base",
                                "usb", "hdmi", "connector", "port"});
  return vocab;
}

std::vector<int> WordVocab::encode(const std::string& text) const {
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    auto it = std::find(words_.begin() + 1, words_.end(), word);
    ids.push_back(it == words_.end() ? kUnk : static_cast<int>(it - words_.begin()));
    word.clear();
  };
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else {
      flush();
    }
  }
  flush();
  return ids;
}

void NormStats::validate() const {
  if (lo.empty() || lo.size() != hi.size()) throw PreconditionError("norm stats: mismatched or empty bounds");
  for (std::size_t d = 0; d < lo.size(); ++d) {
    if (!(lo[d] < hi[d])) {
      throw PreconditionError("norm stats: degenerate dimension " + std::to_string(d) + " (lo " +
                              std::to_string(lo[d]) + " >= hi " + std::to_string(hi[d]) + ")");
    }
  }
}

std::vector<int> tokenize_action(std::span<const double> action, const NormStats& stats, const VocabLayout& vocab) {
  stats.validate();
  const std::size_t dims = stats.lo.size();
  if (action.size() % dims != 0) throw DimensionError("action length not a multiple of the stats dims");
  const auto k = static_cast<double>(vocab.action_bins);
  std::vector<int> out(action.size());
  for (std::size_t i = 0; i < action.size(); ++i) {
    const std::size_t d = i % dims;
    const double u = std::clamp((action[i] - stats.lo[d]) / (stats.hi[d] - stats.lo[d]), 0.0, 1.0);
    const auto bin = std::min(static_cast<std::size_t>(std::floor(u * k)), vocab.action_bins - 1);
    out[i] = vocab.action_begin() + static_cast<int>(bin);
  }
  return out;
}

std::vector<double> detokenize_action(std::span<const int> tokens, const NormStats& stats, const VocabLayout& vocab) {
  stats.validate();
  const std::size_t dims = stats.lo.size();
  std::vector<double> out(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!vocab.is_action(tokens[i])) {
      throw DecodeError("token " + std::to_string(tokens[i]) + " is not an action token");
    }
    const std::size_t d = i % dims;
    const double bin = tokens[i] - vocab.action_begin();
    out[i] = stats.lo[d] + ((bin + 0.5) / static_cast<double>(vocab.action_bins)) * (stats.hi[d] - stats.lo[d]);
  }
  return out;
}

void PolicyConfig::validate() const {
  vision.validate();
  if (variant != Variant::VisionOnly) tactile.validate();
  if (lm_heads == 0 || d_lm % lm_heads != 0) {
    throw ConfigError("d_lm " + std::to_string(d_lm) + " not divisible by lm_heads " + std::to_string(lm_heads));
  }
  if (lm_blocks == 0 || action_dims == 0 || chunk == 0 || vocab.action_bins == 0) {
    throw ConfigError("policy config has an empty dimension");
  }
  if (vocab.text_vocab < WordVocab::builtin().size()) {
    throw ConfigError("text vocab " + std::to_string(vocab.text_vocab) + " smaller than the instruction vocabulary");
  }
  if (variant == Variant::TacFiLM) select_film_blocks(depth, vision.blocks);
  if (sequence_length(0, 0) > max_seq_len) throw ConfigError("max_seq_len too small for the visual prefix");
}

std::size_t PolicyConfig::sequence_length(std::size_t text_len, std::size_t actions_so_far) const {
  return vision.tokens() + extra_tokens() + 1 + text_len + actions_so_far;
}

PolicyConfig PolicyConfig::tiny(Variant v) {
  PolicyConfig c;
  c.variant = v;
  c.vision = ViTConfig{16, 8, 3, 8, 2, 2, 2.0};
  c.tactile = ViTConfig{16, 8, 6, 8, 2, 2, 2.0};
  c.d_lm = 8;
  c.lm_blocks = 2;
  c.lm_heads = 2;
  c.vocab = VocabLayout{16, 8};
  c.max_seq_len = 32;
  return c;
}

std::vector<std::string> LoraConfig::default_targets() {
  return {"vision.*.attn.*", "vision.*.mlp.*", "decoder.*.attn.*", "decoder.*.mlp.*"};
}

bool glob_match(const std::string& pattern, const std::string& text) {
  std::size_t p = 0, t = 0, star = std::string::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (p < pattern.size() && pattern[p] == text[t]) {
      ++p;
      ++t;
    } else if (star != std::string::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

int greedy_action_token(std::span<const double> logits, const VocabLayout& vocab) {
  if (logits.size() != vocab.size()) throw DimensionError("logit row does not match the vocabulary");
  int best = vocab.action_begin();
  for (int id = vocab.action_begin() + 1; id < vocab.action_end(); ++id) {
    if (logits[id] > logits[best]) best = id;
  }
  return best;
}

Policy Policy::build(const PolicyConfig& config, std::uint64_t seed) {
  config.validate();
  Policy p;
  p.config_ = config;
  p.seed_ = seed;
  const Variant v = config.variant;
  p.config_.variant = Variant::VisionOnly;
  Rng root(seed, "policy");
  p.build_base(root);
  if (v != Variant::VisionOnly) p.attach_variant(v, config.depth);
  return p;
}

namespace {

constexpr double kActionEmbedWidth = 4.0;  // bins

// Neighbouring action bins start with similar embeddings: the random rows are
// smoothed along the bin axis and rescaled to the original spread.
void smooth_action_rows(Tensor& embed, const VocabLayout& vocab, double width, double stddev) {
  const std::size_t k0 = static_cast<std::size_t>(vocab.action_begin());
  const std::size_t k = vocab.action_bins;
  const std::size_t d = embed.cols();
  const long reach = static_cast<long>(std::ceil(3.0 * width));
  std::vector<double> col(k), out(k);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < k; ++i) col[i] = embed.at(k0 + i, j);
    double ss = 0.0;
    for (long i = 0; i < static_cast<long>(k); ++i) {
      double acc = 0.0, wsum = 0.0;
      for (long o = -reach; o <= reach; ++o) {
        const long t = i + o;
        if (t < 0 || t >= static_cast<long>(k)) continue;
        const double w = std::exp(-0.5 * static_cast<double>(o * o) / (width * width));
        acc += w * col[t];
        wsum += w;
      }
      out[i] = acc / wsum;
      ss += out[i] * out[i];
    }
    const double scale = ss > 0.0 ? stddev / std::sqrt(ss / static_cast<double>(k)) : 0.0;
    for (std::size_t i = 0; i < k; ++i) embed.at(k0 + i, j) = out[i] * scale;
  }
}

}  // namespace

void Policy::build_base(Rng& root) {
  const PolicyConfig& c = config_;
  Rng ra = root.split("init/vision_a");
  Rng rb = root.split("init/vision_b");
  Rng rp = root.split("init/projector");
  Rng rd = root.split("init/decoder");
  vision_a_ = ViT(c.vision, reg_, "vision.a", ra);
  vision_b_ = ViT(c.vision, reg_, "vision.b", rb);
  projector_ = Mlp(reg_, "projector", 2 * c.vision.embed_dim, c.d_lm, c.d_lm, rp);
  Tensor embed = normal_tensor({c.vocab.size(), c.d_lm}, 0.02, rd);
  smooth_action_rows(embed, c.vocab, kActionEmbedWidth, 0.02);
  tok_embed_ = reg_.create("decoder.tok_embed", std::move(embed));
  dec_pos_ = reg_.create("decoder.pos", normal_tensor({c.max_seq_len, c.d_lm}, 0.02, rd));
  for (std::size_t b = 0; b < c.lm_blocks; ++b) {
    decoder_.emplace_back(reg_, "decoder.block" + std::to_string(b), c.d_lm, c.lm_heads, 4.0, rd);
  }
  dec_ln_ = LayerNorm(reg_, "decoder.ln_final", c.d_lm);
}

void Policy::attach_variant(Variant variant, DepthVariant depth) {
  if (config_.variant != Variant::VisionOnly) throw StateError("policy already carries tactile machinery");
  if (variant == Variant::VisionOnly) return;
  PolicyConfig next = config_;
  next.variant = variant;
  next.depth = depth;
  next.validate();
  config_ = next;
  Rng root(seed_, "policy");
  Rng rt = root.split("init/tactile");
  tactile_.emplace(config_.tactile, reg_, "tactile", rt);
  for (const auto& p : reg_.all()) {
    if (p->name.starts_with("tactile.")) p->set_frozen(true);
  }
  const std::size_t d_t = config_.tactile.embed_dim;
  if (variant == Variant::TacFiLM) {
    Rng rf = root.split("init/film");
    film_.emplace(reg_, "film", select_film_blocks(depth, config_.vision.blocks), d_t, config_.vision.embed_dim, rf);
  } else {
    Rng rc = root.split("init/concat");
    concat_.emplace(reg_, "concat", d_t, config_.d_lm, config_.d_lm, rc);
  }
}

void Policy::load_tactile_encoder(const Checkpoint& ckpt) {
  if (!tactile_) throw StateError("policy has no tactile encoder");
  std::size_t copied = 0;
  for (const auto& p : reg_.all()) {
    if (!p->name.starts_with("tactile.")) continue;
    const CheckpointTensor* t = ckpt.find(p->name);
    if (!t) throw LookupError("tactile checkpoint lacks tensor " + p->name);
    if (t->value.shape() != p->value().shape()) {
      throw DimensionError("tactile tensor " + p->name + " has shape " + shape_str(t->value.shape()) +
                           ", expected " + shape_str(p->value().shape()));
    }
    p->mutable_value() = t->value;
    ++copied;
  }
  if (copied == 0) throw LookupError("tactile checkpoint matched no parameters");
}

TactileFeatures Policy::tactile_features(const Image& tactile_pair) const {
  if (!tactile_) throw StateError("policy has no tactile encoder");
  TactileEmbedding e = tactile_->encode_one(tactile_pair);
  const std::size_t d = e.pooled.size();
  return TactileFeatures{std::move(e.patch_features), Tensor({1, d}, std::move(e.pooled))};
}

namespace {

// Stacks cached per-sample tactile features, encoding any that are missing.
std::pair<Var, Var> batch_tactile(const Policy& policy, const PolicyBatch& batch) {
  std::vector<TactileFeatures> owned;
  std::vector<const TactileFeatures*> feats(batch.inputs.size(), nullptr);
  owned.reserve(batch.inputs.size());
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    if (i < batch.tactile.size() && batch.tactile[i]) {
      feats[i] = batch.tactile[i];
    } else {
      if (!batch.inputs[i].tactile) throw PreconditionError("tactile policy input lacks a tactile frame");
      owned.push_back(policy.tactile_features(*batch.inputs[i].tactile));
      feats[i] = &owned.back();
    }
  }
  const std::size_t p = feats[0]->patch_features.rows();
  const std::size_t d = feats[0]->patch_features.cols();
  Tensor patches({batch.inputs.size() * p, d});
  Tensor pooled({batch.inputs.size(), d});
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (feats[i]->patch_features.rows() != p || feats[i]->patch_features.cols() != d) {
      throw DimensionError("tactile features differ in shape across the batch");
    }
    std::copy(feats[i]->patch_features.values().begin(), feats[i]->patch_features.values().end(),
              patches.data() + i * p * d);
    std::copy(feats[i]->pooled.values().begin(), feats[i]->pooled.values().end(), pooled.data() + i * d);
  }
  return {ops::constant(std::move(patches)), ops::constant(std::move(pooled))};
}

}  // namespace

Var Policy::encode_prefix(const PolicyBatch& batch) const {
  const std::size_t n = batch.inputs.size();
  if (n == 0) throw PreconditionError("empty policy batch");
  std::vector<Image> frames;
  frames.reserve(n);
  for (const auto& in : batch.inputs) {
    if (!in.rgb) throw PreconditionError("policy input lacks an RGB frame");
    frames.push_back(*in.rgb);
  }
  Var patches = ops::constant(patchify_batch(frames, config_.vision.patch_size));

  Var tactile_patches;
  FilmMap film_a, film_b;
  const bool tactile = config_.variant != Variant::VisionOnly;
  if (tactile) {
    auto [tp, pooled] = batch_tactile(*this, batch);
    tactile_patches = tp;
    if (film_) {
      film_a = film_->modulations(Stream::A, pooled);
      film_b = film_->modulations(Stream::B, pooled);
    }
  }
  const bool use_film = static_cast<bool>(film_);
  Var a = vision_a_.forward(patches, n, use_film ? &film_a : nullptr).patch_features;
  Var b = vision_b_.forward(patches, n, use_film ? &film_b : nullptr).patch_features;
  Var visual = projector_.forward(fuse_streams(a, b));
  if (concat_) return ops::concat_seq({visual, concat_->project(tactile_patches)}, n);
  return visual;
}

Var Policy::decode(const Var& prefix, const PolicyBatch& batch, const std::vector<std::vector<int>>& actions,
                   std::size_t outputs) const {
  const std::size_t n = batch.inputs.size();
  const std::size_t text_len = batch.inputs[0].text.size();
  const std::size_t act_len = actions.empty() ? 0 : actions[0].size();
  if (!actions.empty() && actions.size() != n) throw DimensionError("action rows do not match the batch");
  std::vector<int> ids;
  ids.reserve(n * (1 + text_len + act_len));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& text = batch.inputs[i].text;
    if (text.size() != text_len) throw DimensionError("instructions in one batch must have equal length");
    ids.push_back(config_.vocab.bos());
    for (int t : text) {
      if (t < 0 || t >= static_cast<int>(config_.vocab.text_vocab)) {
        throw IndexError("text token " + std::to_string(t) + " outside the text vocabulary");
      }
      ids.push_back(t);
    }
    if (!actions.empty()) {
      if (actions[i].size() != act_len) throw DimensionError("action prefixes in one batch must have equal length");
      for (int a : actions[i]) {
        if (!config_.vocab.is_action(a)) throw IndexError("token " + std::to_string(a) + " is not an action token");
        ids.push_back(a);
      }
    }
  }
  const std::size_t seq = sequence_length(text_len, act_len);
  if (seq > config_.max_seq_len) {
    throw LengthError("sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
                      std::to_string(config_.max_seq_len));
  }
  if (outputs == 0 || outputs > 1 + text_len + act_len) throw PreconditionError("bad decode output count");
  Var tokens = ops::embedding(tok_embed_->var, ids);
  Var x = ops::concat_seq({prefix, tokens}, n);
  std::vector<std::size_t> pos_rows(seq);
  for (std::size_t r = 0; r < seq; ++r) pos_rows[r] = r;
  x = ops::add_tiled(x, ops::gather_rows(dec_pos_->var, pos_rows));
  for (const auto& block : decoder_) x = block.forward(x, seq, true);
  std::vector<std::size_t> out_rows;
  out_rows.reserve(n * outputs);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = seq - outputs; j < seq; ++j) out_rows.push_back(i * seq + j);
  Var h = dec_ln_.forward(ops::gather_rows(x, out_rows));
  return ops::linear(h, tok_embed_->var);
}

Var Policy::forward(const PolicyBatch& batch) const {
  if (batch.actions.size() != batch.inputs.size()) throw DimensionError("teacher forcing needs one action row per input");
  const std::size_t n_act = batch.actions[0].size();
  if (n_act == 0) throw PreconditionError("teacher forcing needs at least one action token");
  std::vector<std::vector<int>> fed(batch.actions.size());
  for (std::size_t i = 0; i < fed.size(); ++i) {
    if (batch.actions[i].size() != n_act) throw DimensionError("action rows differ in length");
    fed[i].assign(batch.actions[i].begin(), batch.actions[i].end() - 1);
  }
  return decode(encode_prefix(batch), batch, fed, n_act);
}

Var Policy::next_logits(const PolicyBatch& batch) const {
  return decode(encode_prefix(batch), batch, batch.actions, 1);
}

std::vector<int> Policy::predict_tokens(const PolicyInput& input, const TactileFeatures* cached) const {
  NoGradGuard guard;
  PolicyBatch batch;
  batch.inputs = {input};
  if (cached) batch.tactile = {cached};
  const Var prefix = encode_prefix(batch);
  std::vector<std::vector<int>> actions(1);
  for (std::size_t k = 0; k < config_.action_tokens(); ++k) {
    const Var logits = decode(prefix, batch, actions, 1);
    actions[0].push_back(greedy_action_token(logits.value().values(), config_.vocab));
  }
  return actions[0];
}

std::vector<double> Policy::predict_action(const PolicyInput& input, const TactileFeatures* cached) const {
  return detokenize_action(predict_tokens(input, cached), norm_, config_.vocab);
}

std::size_t Policy::lora_wrap(const LoraConfig& cfg, std::uint64_t seed) {
  if (lora_state_ != LoraState::None) throw StateError("policy already LoRA-adapted");
  if (cfg.rank == 0) throw ConfigError("LoRA rank must be positive");
  std::vector<std::shared_ptr<LinearParams>> matched;
  for (const auto& pattern : cfg.targets) {
    bool any = false;
    for (const auto& lin : reg_.linears()) {
      if (!glob_match(pattern, lin->name)) continue;
      any = true;
      if (std::find(matched.begin(), matched.end(), lin) == matched.end()) matched.push_back(lin);
    }
    if (!any) throw ConfigError("LoRA target pattern '" + pattern + "' matches no linear layer");
  }
  freeze_for_lora();
  std::size_t added = 0;
  for (const auto& lin : matched) {
    Rng r(seed, "lora/" + lin->name);
    LoraAdapter ad;
    ad.rank = cfg.rank;
    ad.alpha = cfg.alpha;
    ad.a = reg_.create(lin->name + ".lora_a",
                       normal_tensor({cfg.rank, lin->in()}, 1.0 / std::sqrt(static_cast<double>(lin->in())), r));
    ad.b = reg_.create(lin->name + ".lora_b", Tensor({lin->out(), cfg.rank}, 0.0));
    lin->lora = ad;
    added += cfg.rank * (lin->in() + lin->out());
  }
  lora_cfg_ = cfg;
  lora_seed_ = seed;
  lora_state_ = LoraState::Wrapped;
  return added;
}

void Policy::freeze_for_lora() {
  for (const auto& p : reg_.all()) {
    const bool keep = p->name.starts_with("film.") || p->name.starts_with("concat.") ||
                      p->name == "decoder.tok_embed";
    p->set_frozen(!keep);
  }
}

void Policy::lora_merge() {
  if (lora_state_ == LoraState::Merged) throw StateError("LoRA adapters already merged");
  if (lora_state_ == LoraState::None) throw StateError("policy has no LoRA adapters to merge");
  for (const auto& lin : reg_.linears()) {
    if (!lin->lora) continue;
    const LoraAdapter& ad = *lin->lora;
    lin->weight->mutable_value().mat() += ad.scale() * (ad.b->value().mat() * ad.a->value().mat());
    reg_.remove(ad.a->name);
    reg_.remove(ad.b->name);
    lin->lora.reset();
  }
  lora_state_ = LoraState::Merged;
}

std::size_t Policy::lora_parameter_count() const {
  std::size_t n = 0;
  for (const auto& lin : reg_.linears()) {
    if (lin->lora) n += lin->lora->a->value().size() + lin->lora->b->value().size();
  }
  return n;
}

std::map<std::string, std::uint64_t> Policy::checksums() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& p : reg_.all()) out[p->name] = p->value().checksum();
  return out;
}

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += exact_double(v[i]);
  }
  return s;
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(item));
  return out;
}

std::string join_words(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

void put_vit(Checkpoint& c, const std::string& prefix, const ViTConfig& v) {
  c.set(prefix + ".image_size", std::to_string(v.image_size));
  c.set(prefix + ".patch_size", std::to_string(v.patch_size));
  c.set(prefix + ".channels", std::to_string(v.channels));
  c.set(prefix + ".embed_dim", std::to_string(v.embed_dim));
  c.set(prefix + ".blocks", std::to_string(v.blocks));
  c.set(prefix + ".heads", std::to_string(v.heads));
  c.set(prefix + ".mlp_ratio", exact_double(v.mlp_ratio));
}

std::size_t get_size(const Checkpoint& c, const std::string& key) {
  const std::string& s = c.get(key);
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw FormatError("checkpoint meta " + key + " is not an unsigned integer: " + s, 0);
  }
}

ViTConfig get_vit(const Checkpoint& c, const std::string& prefix) {
  ViTConfig v;
  v.image_size = get_size(c, prefix + ".image_size");
  v.patch_size = get_size(c, prefix + ".patch_size");
  v.channels = get_size(c, prefix + ".channels");
  v.embed_dim = get_size(c, prefix + ".embed_dim");
  v.blocks = get_size(c, prefix + ".blocks");
  v.heads = get_size(c, prefix + ".heads");
  v.mlp_ratio = parse_double(c.get(prefix + ".mlp_ratio"));
  return v;
}

}  // namespace

Checkpoint Policy::to_checkpoint() const {
  Checkpoint c;
  c.set("kind", "policy");
  c.set("variant", variant_name(config_.variant));
  c.set("depth", depth_variant_name(config_.depth));
  c.set("seed", std::to_string(seed_));
  put_vit(c, "vision", config_.vision);
  put_vit(c, "tactile", config_.tactile);
  c.set("d_lm", std::to_string(config_.d_lm));
  c.set("lm_blocks", std::to_string(config_.lm_blocks));
  c.set("lm_heads", std::to_string(config_.lm_heads));
  c.set("text_vocab", std::to_string(config_.vocab.text_vocab));
  c.set("action_bins", std::to_string(config_.vocab.action_bins));
  c.set("action_dims", std::to_string(config_.action_dims));
  c.set("chunk", std::to_string(config_.chunk));
  c.set("max_seq_len", std::to_string(config_.max_seq_len));
  c.set("norm.lo", join_doubles(norm_.lo));
  c.set("norm.hi", join_doubles(norm_.hi));
  c.set("lora.state", lora_state_ == LoraState::None ? "none" : lora_state_ == LoraState::Wrapped ? "wrapped" : "merged");
  c.set("lora.targets", join_words(lora_cfg_.targets));
  c.set("lora.rank", std::to_string(lora_cfg_.rank));
  c.set("lora.alpha", exact_double(lora_cfg_.alpha));
  c.set("lora.seed", std::to_string(lora_seed_));
  for (const auto& p : reg_.all()) c.tensors.push_back({p->name, p->frozen(), p->value()});
  return c;
}

Policy Policy::from_checkpoint(const Checkpoint& c) {
  if (!c.has("kind") || c.get("kind") != "policy") throw FormatError("checkpoint does not hold a policy", 0);
  PolicyConfig cfg;
  cfg.variant = Variant::VisionOnly;
  cfg.depth = parse_depth_variant(c.get("depth"));
  cfg.vision = get_vit(c, "vision");
  cfg.tactile = get_vit(c, "tactile");
  cfg.d_lm = get_size(c, "d_lm");
  cfg.lm_blocks = get_size(c, "lm_blocks");
  cfg.lm_heads = get_size(c, "lm_heads");
  cfg.vocab.text_vocab = get_size(c, "text_vocab");
  cfg.vocab.action_bins = get_size(c, "action_bins");
  cfg.action_dims = get_size(c, "action_dims");
  cfg.chunk = get_size(c, "chunk");
  cfg.max_seq_len = get_size(c, "max_seq_len");
  Policy p = build(cfg, get_size(c, "seed"));
  p.attach_variant(parse_variant(c.get("variant")), cfg.depth);
  p.norm_.lo = split_doubles(c.get("norm.lo"));
  p.norm_.hi = split_doubles(c.get("norm.hi"));
  LoraConfig lc;
  lc.targets = split_words(c.get("lora.targets"));
  lc.rank = get_size(c, "lora.rank");
  lc.alpha = parse_double(c.get("lora.alpha"));
  const std::string state = c.get("lora.state");
  if (state == "wrapped" || state == "merged") {
    p.lora_wrap(lc, get_size(c, "lora.seed"));
    if (state == "merged") p.lora_merge();
  } else if (state != "none") {
    throw FormatError("unknown lora state '" + state + "'", 0);
  } else {
    p.lora_cfg_ = lc;
  }
  if (c.tensors.size() != p.reg_.all().size()) {
    throw FormatError("checkpoint holds " + std::to_string(c.tensors.size()) + " tensors, policy expects " +
                          std::to_string(p.reg_.all().size()),
                      0);
  }
  for (const auto& t : c.tensors) {
    ParamPtr param = p.reg_.find(t.name);
    if (!param) throw FormatError("checkpoint tensor " + t.name + " has no matching parameter", 0);
    if (param->value().shape() != t.value.shape()) {
      throw FormatError("checkpoint tensor " + t.name + " has shape " + shape_str(t.value.shape()) + ", expected " +
                            shape_str(param->value().shape()),
                        0);
    }
    param->mutable_value() = t.value;
    param->set_frozen(t.frozen);
  }
  return p;
}

}  // namespace tvla
