#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "tvla/image.hpp"
#include "tvla/nn.hpp"

namespace tvla {

struct ViTConfig {
  std::size_t image_size = 48;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t embed_dim = 64;
  std::size_t blocks = 6;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;

  void validate() const;
  std::size_t tokens() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  // Default tactile encoder: 32x32 frame pairs (6 channels), 16 tokens, d_t = 32.
  static ViTConfig tactile_default();
};

// Post-normalization features F^n of every block, captured where FiLM applies.
struct BlockActivations {
  std::vector<Var> features;
};

struct ViTOutput {
  Var patch_features;  // [batch*tokens x embed_dim]
  BlockActivations activations;
};

// Block index -> per-sample (gamma, beta).
using FilmMap = std::map<std::size_t, Modulation>;

// Patch-token vision transformer: linear patch projection, learned positional
// embeddings (no class token), pre-norm blocks, final LayerNorm.
class ViT {
 public:
  ViT() = default;
  ViT(const ViTConfig& config, ParameterRegistry& reg, const std::string& prefix, Rng& rng);

  const ViTConfig& config() const { return config_; }

  // `patches` is [batch*tokens x patch_dim]. Blocks present in `film` get
  // their attention input modulated; indices >= blocks raise ConfigError.
  ViTOutput forward(const Var& patches, std::size_t batch, const FilmMap* film = nullptr,
                    bool capture = false) const;
  ViTOutput forward(std::span<const Image> images, const FilmMap* film = nullptr, bool capture = false) const;

 private:
  ViTConfig config_;
  Linear patch_proj_;
  ParamPtr pos_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm final_ln_;
};

// Channel-wise fusion of two per-patch streams, stream `a` first.
Var fuse_streams(const Var& a, const Var& b);

// Selects frames t and max(t-5, 0), removes the background by per-pixel
// subtraction, clamps to [0, 1], stacks channels (older frame first) and
// area-resizes to out_size x out_size.
Image tactile_preprocess(std::span<const Image> history, std::size_t t, const Image& background,
                         std::size_t out_size);

inline constexpr std::size_t kTactileFrameGap = 5;

struct TactileEmbedding {
  Tensor patch_features;       // [p x d_t]
  std::vector<double> pooled;  // z, mean of patch_features rows
};

struct TactileBatch {
  Var patch_features;  // [batch*p x d_t]
  Var pooled;          // [batch x d_t]
};

// Tactile ViT stand-in. Embeddings are mean-pooled patch features.
class TactileEncoder {
 public:
  TactileEncoder() = default;
  TactileEncoder(const ViTConfig& config, ParameterRegistry& reg, const std::string& prefix, Rng& rng);

  const ViTConfig& config() const { return vit_.config(); }
  TactileBatch encode(std::span<const Image> images) const;
  TactileEmbedding encode_one(const Image& image) const;

 private:
  ViT vit_;
};

// Mean of the rows of a [p x d] feature matrix.
std::vector<double> pool_features(const Tensor& patch_features);

}  // namespace tvla
