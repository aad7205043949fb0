#include "tvla/encoders.hpp"

#include <algorithm>
#include <string>

#include "tvla/errors.hpp"
#include "tvla/ops.hpp"

namespace tvla {

void ViTConfig::validate() const {
  if (patch_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " not divisible by heads " + std::to_string(heads));
  }
  if (channels == 0 || blocks == 0 || mlp_ratio <= 0.0) throw ConfigError("ViT config has an empty dimension");
}

ViTConfig ViTConfig::tactile_default() {
  ViTConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.channels = 6;
  c.embed_dim = 32;
  c.blocks = 4;
  c.heads = 4;
  c.mlp_ratio = 4.0;
  return c;
}

ViT::ViT(const ViTConfig& config, ParameterRegistry& reg, const std::string& prefix, Rng& rng) : config_(config) {
  config_.validate();
  patch_proj_ = Linear(reg, prefix + ".patch_proj", config_.patch_dim(), config_.embed_dim, rng);
  pos_ = reg.create(prefix + ".pos", normal_tensor({config_.tokens(), config_.embed_dim}, 0.02, rng));
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    blocks_.emplace_back(reg, prefix + ".block" + std::to_string(b), config_.embed_dim, config_.heads,
                         config_.mlp_ratio, rng);
  }
  final_ln_ = LayerNorm(reg, prefix + ".ln_final", config_.embed_dim);
}

ViTOutput ViT::forward(const Var& patches, std::size_t batch, const FilmMap* film, bool capture) const {
  const std::size_t t = config_.tokens();
  if (patches.cols() != config_.patch_dim() || patches.rows() != batch * t) {
    throw DimensionError("ViT expects " + std::to_string(batch * t) + "x" + std::to_string(config_.patch_dim()) +
                         " patches, got " + shape_str(patches.shape()));
  }
  if (film) {
    for (const auto& [block, mod] : *film) {
      if (block >= config_.blocks) {
        throw ConfigError("FiLM targets block " + std::to_string(block) + " but the ViT has " +
                          std::to_string(config_.blocks));
      }
    }
  }
  ViTOutput out;
  Var x = ops::add_tiled(patch_proj_.forward(patches), pos_->var);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Modulation* mod = nullptr;
    if (film) {
      auto it = film->find(b);
      if (it != film->end()) mod = &it->second;
    }
    Var normalized;
    x = blocks_[b].forward(x, t, false, mod, capture ? &normalized : nullptr);
    if (capture) out.activations.features.push_back(normalized);
  }
  out.patch_features = final_ln_.forward(x);
  return out;
}

ViTOutput ViT::forward(std::span<const Image> images, const FilmMap* film, bool capture) const {
  for (const auto& im : images) {
    if (im.height != config_.image_size || im.width != config_.image_size || im.channels != config_.channels) {
      throw DimensionError("ViT input image " + std::to_string(im.height) + "x" + std::to_string(im.width) + "x" +
                           std::to_string(im.channels) + " does not match config");
    }
  }
  return forward(ops::constant(patchify_batch(images, config_.patch_size)), images.size(), film, capture);
}

Var fuse_streams(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("fuse_streams token mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return ops::concat_cols(a, b);
}

Image tactile_preprocess(std::span<const Image> history, std::size_t t, const Image& background,
                         std::size_t out_size) {
  if (history.empty()) throw PreconditionError("tactile_preprocess: empty frame history");
  if (t >= history.size()) throw PreconditionError("tactile_preprocess: step beyond recorded history");
  const Image& cur = history[t];
  const Image& old = history[t >= kTactileFrameGap ? t - kTactileFrameGap : 0];
  if (cur.size() != background.size() || old.size() != background.size()) {
    throw DimensionError("tactile_preprocess: frame and background sizes differ");
  }
  const std::size_t c = cur.channels;
  Image stacked(cur.height, cur.width, 2 * c);
  for (std::size_t y = 0; y < cur.height; ++y) {
    for (std::size_t x = 0; x < cur.width; ++x) {
      for (std::size_t k = 0; k < c; ++k) {
        const double bg = background.at(y, x, k);
        stacked.at(y, x, k) = std::clamp(old.at(y, x, k) - bg, 0.0, 1.0);
        stacked.at(y, x, c + k) = std::clamp(cur.at(y, x, k) - bg, 0.0, 1.0);
      }
    }
  }
  return resize_area(stacked, out_size, out_size);
}

TactileEncoder::TactileEncoder(const ViTConfig& config, ParameterRegistry& reg, const std::string& prefix, Rng& rng)
    : vit_(config, reg, prefix, rng) {}

TactileBatch TactileEncoder::encode(std::span<const Image> images) const {
  TactileBatch out;
  out.patch_features = vit_.forward(images).patch_features;
  out.pooled = ops::mean_pool(out.patch_features, images.size());
  return out;
}

TactileEmbedding TactileEncoder::encode_one(const Image& image) const {
  NoGradGuard guard;
  const TactileBatch b = encode(std::span<const Image>(&image, 1));
  return TactileEmbedding{b.patch_features.value(), pool_features(b.patch_features.value())};
}

std::vector<double> pool_features(const Tensor& patch_features) {
  const std::size_t p = patch_features.rows();
  const std::size_t d = patch_features.cols();
  if (p == 0) throw PreconditionError("pool_features on empty feature set");
  std::vector<double> z(d, 0.0);
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t j = 0; j < d; ++j) z[j] += patch_features.at(r, j);
  for (auto& v : z) v /= static_cast<double>(p);
  return z;
}

}  // namespace tvla
