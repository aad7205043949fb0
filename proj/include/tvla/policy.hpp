#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tvla/checkpoint.hpp"
#include "tvla/encoders.hpp"
#include "tvla/fusion.hpp"

namespace tvla {

enum class Variant { VisionOnly, TactileConcat, TacFiLM };
const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);

// Token ids: [0, text_vocab) text, [text_vocab, text_vocab + bins) actions,
// then BOS, EOS, PAD.
struct VocabLayout {
  std::size_t text_vocab = 64;
  std::size_t action_bins = 256;

  int action_begin() const { return static_cast<int>(text_vocab); }
  int action_end() const { return static_cast<int>(text_vocab + action_bins); }
  int bos() const { return action_end(); }
  int eos() const { return action_end() + 1; }
  int pad() const { return action_end() + 2; }
  std::size_t size() const { return text_vocab + action_bins + 3; }
  bool is_action(int id) const { return id >= action_begin() && id < action_end(); }
};

// Fixed word-level vocabulary over the benchmark instructions. Id 0 is UNK.
class WordVocab {
 public:
  static const WordVocab& builtin();
  std::vector<int> encode(const std::string& text) const;
  std::size_t size() const { return words_.size(); }
  static constexpr int kUnk = 0;

 private:
  explicit WordVocab(std::vector<std::string> words);
  std::vector<std::string> words_;
};

struct NormStats {
  std::vector<double> lo;
  std::vector<double> hi;
  void validate() const;
};

// Per dim: clamp((a - lo) / (hi - lo), 0, 1) scaled to `bins` uniform bins.
std::vector<int> tokenize_action(std::span<const double> action, const NormStats& stats, const VocabLayout& vocab);
// Bin centres; throws DecodeError for non-action ids.
std::vector<double> detokenize_action(std::span<const int> tokens, const NormStats& stats, const VocabLayout& vocab);

struct PolicyConfig {
  Variant variant = Variant::TacFiLM;
  DepthVariant depth = DepthVariant::All;
  ViTConfig vision;
  ViTConfig tactile = ViTConfig::tactile_default();
  std::size_t d_lm = 96;
  std::size_t lm_blocks = 4;
  std::size_t lm_heads = 4;
  VocabLayout vocab;
  std::size_t action_dims = 3;
  std::size_t chunk = 1;
  std::size_t max_seq_len = 128;

  void validate() const;
  std::size_t action_tokens() const { return action_dims * chunk; }
  std::size_t extra_tokens() const { return variant == Variant::TactileConcat ? tactile.tokens() : 0; }
  std::size_t sequence_length(std::size_t text_len, std::size_t actions_so_far) const;

  // Small dimensions for gradient checks and fast tests.
  static PolicyConfig tiny(Variant v);
};

// One decision step: RGB frame, preprocessed tactile pair, instruction ids.
struct PolicyInput {
  const Image* rgb = nullptr;
  const Image* tactile = nullptr;
  std::span<const int> text;
};

// Frozen-encoder outputs computed ahead of time ([p x d_t] and [d_t]).
struct TactileFeatures {
  Tensor patch_features;
  Tensor pooled;
};

struct PolicyBatch {
  std::vector<PolicyInput> inputs;
  std::vector<std::vector<int>> actions;          // teacher-forced action tokens, equal length
  std::vector<const TactileFeatures*> tactile;  // optional cache, one per input
};

struct LoraConfig {
  std::vector<std::string> targets = default_targets();
  std::size_t rank = 8;
  double alpha = 16.0;
  static std::vector<std::string> default_targets();
};

enum class LoraState { None, Wrapped, Merged };

class Policy {
 public:
  static Policy build(const PolicyConfig& config, std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  ParameterRegistry& registry() { return reg_; }
  const ParameterRegistry& registry() const { return reg_; }

  // Adds the variant's tactile machinery (encoder, FiLM generators or concat
  // projector) to a policy built without it.
  void attach_variant(Variant variant, DepthVariant depth);
  // Copies tactile.* tensors from a checkpoint; the encoder stays frozen.
  void load_tactile_encoder(const Checkpoint& ckpt);

  std::size_t film_generator_count() const { return film_ ? film_->size() : 0; }
  const FilmBank* film() const { return film_ ? &*film_ : nullptr; }
  const TactileEncoder* tactile_encoder() const { return tactile_ ? &*tactile_ : nullptr; }

  // Input-sequence length for a batch with these text/action lengths.
  std::size_t sequence_length(std::size_t text_len, std::size_t actions_so_far) const {
    return config_.sequence_length(text_len, actions_so_far);
  }

  // Teacher-forced logits [batch*n x vocab] for the n action tokens of each
  // sample: row (i, j) predicts actions[i][j] from the prefix and actions[i][0..j).
  Var forward(const PolicyBatch& batch) const;
  // Next-token logits [batch x vocab] after the prefix and actions[i].
  Var next_logits(const PolicyBatch& batch) const;

  // Visual (+ tactile) prefix tokens [batch*P x d_lm]; reused across decode steps.
  Var encode_prefix(const PolicyBatch& batch) const;
  // Runs the decoder over [prefix | BOS | text | actions[i]] and returns
  // logits for the last `outputs` positions of each sample.
  Var decode(const Var& prefix, const PolicyBatch& batch, const std::vector<std::vector<int>>& actions,
             std::size_t outputs) const;

  TactileFeatures tactile_features(const Image& tactile_pair) const;

  // Greedy masked decoding of action_dims * chunk tokens.
  std::vector<int> predict_tokens(const PolicyInput& input, const TactileFeatures* cached = nullptr) const;
  std::vector<double> predict_action(const PolicyInput& input, const TactileFeatures* cached = nullptr) const;

  const NormStats& norm_stats() const { return norm_; }
  void set_norm_stats(NormStats s) { norm_ = std::move(s); }

  LoraState lora_state() const { return lora_state_; }
  const LoraConfig& lora_config() const { return lora_cfg_; }
  // Returns the number of adapter values added.
  std::size_t lora_wrap(const LoraConfig& cfg, std::uint64_t seed);
  void lora_merge();
  std::size_t lora_parameter_count() const;

  std::map<std::string, std::uint64_t> checksums() const;
  std::vector<ParamPtr> trainable() const { return reg_.trainable(); }

  Checkpoint to_checkpoint() const;
  static Policy from_checkpoint(const Checkpoint& ckpt);

 private:
  Policy() = default;
  void build_base(Rng& root);
  void freeze_for_lora();

  PolicyConfig config_;
  std::uint64_t seed_ = 0;
  ParameterRegistry reg_;
  ViT vision_a_;
  ViT vision_b_;
  Mlp projector_;
  ParamPtr tok_embed_;
  ParamPtr dec_pos_;
  std::vector<TransformerBlock> decoder_;
  LayerNorm dec_ln_;
  std::optional<TactileEncoder> tactile_;
  std::optional<FilmBank> film_;
  std::optional<ConcatProjector> concat_;
  NormStats norm_;
  LoraState lora_state_ = LoraState::None;
  LoraConfig lora_cfg_;
  std::uint64_t lora_seed_ = 0;
};

// Greedy choice restricted to the action range; ties go to the lowest id.
int greedy_action_token(std::span<const double> logits, const VocabLayout& vocab);

// '*' matches any run of characters.
bool glob_match(const std::string& pattern, const std::string& text);

}  // namespace tvla
