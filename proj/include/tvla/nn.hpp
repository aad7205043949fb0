#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tvla/autodiff.hpp"
#include "tvla/rng.hpp"

namespace tvla {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng);

// Low-rank additive delta on a linear map: W_eff = W + (alpha/rank) * B * A,
// with A [rank x in] and B [out x rank]. B starts at zero.
struct LoraAdapter {
  ParamPtr a;
  ParamPtr b;
  std::size_t rank = 0;
  double alpha = 0.0;
  double scale() const { return alpha / static_cast<double>(rank); }
};

struct LinearParams {
  std::string name;
  ParamPtr weight;  // [out x in]
  ParamPtr bias;    // [out], may be null
  std::optional<LoraAdapter> lora;
  std::size_t in() const { return weight->value().dim(1); }
  std::size_t out() const { return weight->value().dim(0); }
};

// Owns every parameter of a model under unique hierarchical names, plus the
// list of linear layers (the LoRA attachment points).
class ParameterRegistry {
 public:
  ParamPtr create(const std::string& name, Tensor init);
  ParamPtr find(const std::string& name) const;
  void remove(const std::string& name);
  const std::vector<ParamPtr>& all() const { return params_; }
  std::vector<ParamPtr> trainable() const;
  std::size_t count_values() const;

  void add_linear(std::shared_ptr<LinearParams> lin) { linears_.push_back(std::move(lin)); }
  const std::vector<std::shared_ptr<LinearParams>>& linears() const { return linears_; }

 private:
  std::vector<ParamPtr> params_;
  std::vector<std::shared_ptr<LinearParams>> linears_;
};

enum class Init { LeCun, Zero };

class Linear {
 public:
  Linear() = default;
  Linear(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool bias = true, Init init = Init::LeCun);

  Var forward(const Var& x) const;
  LinearParams& params() const { return *p_; }

 private:
  std::shared_ptr<LinearParams> p_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterRegistry& reg, const std::string& name, std::size_t width);
  Var forward(const Var& x) const;

 private:
  ParamPtr gain_;
  ParamPtr bias_;
};

// Two linears with a GELU between them.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
      Rng& rng, Init last_init = Init::LeCun);
  Var forward(const Var& x) const;

 private:
  Linear fc1_;
  Linear fc2_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterRegistry& reg, const std::string& name, std::size_t width, std::size_t heads,
                     Rng& rng);
  // x is [batch*tokens x width].
  Var forward(const Var& x, std::size_t tokens, bool causal) const;

 private:
  Linear q_, k_, v_, o_;
  std::size_t heads_ = 1;
};

// Per-sample channel modulation handed to a block: gamma/beta are [B x width].
struct Modulation {
  Var gamma;
  Var beta;
};

// Pre-norm transformer block. When `mod` is given, the normalized features
// feeding self-attention are modulated before attention reads them.
// `normalized` receives those features before modulation.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterRegistry& reg, const std::string& name, std::size_t width, std::size_t heads,
                   double mlp_ratio, Rng& rng);
  Var forward(const Var& x, std::size_t tokens, bool causal, const Modulation* mod = nullptr,
              Var* normalized = nullptr) const;

 private:
  LayerNorm ln1_;
  MultiHeadAttention attn_;
  LayerNorm ln2_;
  Mlp mlp_;
};

}  // namespace tvla
