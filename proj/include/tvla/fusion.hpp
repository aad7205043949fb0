#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tvla/encoders.hpp"

namespace tvla {

enum class Stream { A, B };
const char* stream_name(Stream s);

struct FilmParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::size_t block = 0;
  Stream stream = Stream::A;
};

enum class DepthVariant { All, Early, Middle, Late };
const char* depth_variant_name(DepthVariant v);
DepthVariant parse_depth_variant(const std::string& s);

// All -> every block; Early/Middle/Late -> ceil(B/3) contiguous blocks at
// the start, centred (starting at floor((B - ceil(B/3)) / 2)), or the end.
std::vector<std::size_t> select_film_blocks(DepthVariant variant, std::size_t blocks);

// F ⊙ (1 + gamma) + beta with gamma/beta broadcast over every token row.
Tensor film_apply(const Tensor& features, const FilmParams& p);

// MLP d_t -> 2 d_t -> 2 * embed_dim whose output splits into (gamma, beta).
// The output layer starts at exactly zero, so fresh generators emit the
// identity modulation.
class FilmGenerator {
 public:
  FilmGenerator() = default;
  FilmGenerator(ParameterRegistry& reg, const std::string& name, std::size_t tactile_dim, std::size_t embed_dim,
                std::size_t block, Stream stream, Rng& rng);

  Modulation generate(const Var& pooled) const;  // pooled is [batch x d_t]
  std::size_t block() const { return block_; }
  Stream stream() const { return stream_; }

 private:
  Mlp mlp_;
  std::size_t embed_dim_ = 0;
  std::size_t block_ = 0;
  Stream stream_ = Stream::A;
};

// One generator per (stream, conditioned block); nothing is shared.
class FilmBank {
 public:
  FilmBank() = default;
  FilmBank(ParameterRegistry& reg, const std::string& prefix, const std::vector<std::size_t>& blocks,
           std::size_t tactile_dim, std::size_t embed_dim, Rng& rng);

  std::size_t size() const { return generators_.size(); }
  const std::vector<std::size_t>& blocks() const { return blocks_; }
  FilmMap modulations(Stream stream, const Var& pooled) const;
  // Throws LookupError for blocks outside the conditioned set.
  FilmParams film_generate(const std::vector<double>& z, std::size_t block, Stream stream) const;

 private:
  std::vector<std::size_t> blocks_;
  std::map<std::pair<Stream, std::size_t>, FilmGenerator> generators_;
};

// Two-layer MLP d_t -> hidden -> d_lm applied per tactile patch; the token
// count is preserved.
class ConcatProjector {
 public:
  ConcatProjector() = default;
  ConcatProjector(ParameterRegistry& reg, const std::string& name, std::size_t tactile_dim, std::size_t hidden,
                  std::size_t out_dim, Rng& rng);
  Var project(const Var& patch_features) const;

 private:
  Mlp mlp_;
};

}  // namespace tvla
