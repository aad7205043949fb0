#include "tvla/fusion.hpp"

#include "tvla/errors.hpp"
#include "tvla/ops.hpp"

namespace tvla {

const char* stream_name(Stream s) { return s == Stream::A ? "a" : "b"; }

const char* depth_variant_name(DepthVariant v) {
  switch (v) {
    case DepthVariant::All: return "all";
    case DepthVariant::Early: return "early";
    case DepthVariant::Middle: return "middle";
    case DepthVariant::Late: return "late";
  }
  return "all";
}

DepthVariant parse_depth_variant(const std::string& s) {
  if (s == "all") return DepthVariant::All;
  if (s == "early") return DepthVariant::Early;
  if (s == "middle") return DepthVariant::Middle;
  if (s == "late") return DepthVariant::Late;
  throw ConfigError("unknown depth variant '" + s + "' (expected all|early|middle|late)");
}

std::vector<std::size_t> select_film_blocks(DepthVariant variant, std::size_t blocks) {
  std::vector<std::size_t> out;
  if (variant == DepthVariant::All) {
    for (std::size_t i = 0; i < blocks; ++i) out.push_back(i);
    return out;
  }
  if (blocks < 3) throw ConfigError("a thirds depth variant needs at least 3 blocks, got " + std::to_string(blocks));
  const std::size_t third = (blocks + 2) / 3;
  std::size_t start = 0;
  if (variant == DepthVariant::Middle) start = (blocks - third) / 2;
  if (variant == DepthVariant::Late) start = blocks - third;
  for (std::size_t i = 0; i < third; ++i) out.push_back(start + i);
  return out;
}

Tensor film_apply(const Tensor& features, const FilmParams& p) {
  const std::size_t c = features.cols();
  if (p.gamma.size() != c || p.beta.size() != c) {
    throw DimensionError("film_apply: features have " + std::to_string(c) + " channels but gamma/beta have " +
                         std::to_string(p.gamma.size()) + "/" + std::to_string(p.beta.size()));
  }
  Tensor g({1, c}, p.gamma);
  Tensor b({1, c}, p.beta);
  NoGradGuard guard;
  return ops::film(ops::constant(features), ops::constant(std::move(g)), ops::constant(std::move(b))).value();
}

FilmGenerator::FilmGenerator(ParameterRegistry& reg, const std::string& name, std::size_t tactile_dim,
                             std::size_t embed_dim, std::size_t block, Stream stream, Rng& rng)
    : mlp_(reg, name, tactile_dim, 2 * tactile_dim, 2 * embed_dim, rng, Init::Zero),
      embed_dim_(embed_dim),
      block_(block),
      stream_(stream) {}

Modulation FilmGenerator::generate(const Var& pooled) const {
  Var out = mlp_.forward(pooled);
  return Modulation{ops::slice_cols(out, 0, embed_dim_), ops::slice_cols(out, embed_dim_, embed_dim_)};
}

FilmBank::FilmBank(ParameterRegistry& reg, const std::string& prefix, const std::vector<std::size_t>& blocks,
                   std::size_t tactile_dim, std::size_t embed_dim, Rng& rng)
    : blocks_(blocks) {
  for (Stream s : {Stream::A, Stream::B}) {
    for (std::size_t b : blocks) {
      const std::string name = prefix + "." + stream_name(s) + ".block" + std::to_string(b);
      generators_.emplace(std::make_pair(s, b), FilmGenerator(reg, name, tactile_dim, embed_dim, b, s, rng));
    }
  }
}

FilmMap FilmBank::modulations(Stream stream, const Var& pooled) const {
  FilmMap out;
  for (std::size_t b : blocks_) out.emplace(b, generators_.at({stream, b}).generate(pooled));
  return out;
}

FilmParams FilmBank::film_generate(const std::vector<double>& z, std::size_t block, Stream stream) const {
  auto it = generators_.find({stream, block});
  if (it == generators_.end()) {
    throw LookupError("block " + std::to_string(block) + " of stream " + stream_name(stream) +
                      " is not FiLM-conditioned");
  }
  NoGradGuard guard;
  const Modulation m = it->second.generate(ops::constant(Tensor({1, z.size()}, z)));
  return FilmParams{m.gamma.value().to_vector(), m.beta.value().to_vector(), block, stream};
}

ConcatProjector::ConcatProjector(ParameterRegistry& reg, const std::string& name, std::size_t tactile_dim,
                                 std::size_t hidden, std::size_t out_dim, Rng& rng)
    : mlp_(reg, name, tactile_dim, hidden, out_dim, rng) {}

Var ConcatProjector::project(const Var& patch_features) const { return mlp_.forward(patch_features); }

}  // namespace tvla
