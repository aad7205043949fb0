#include "tvla/nn.hpp"

#include <cmath>

#include "tvla/errors.hpp"
#include "tvla/ops.hpp"

namespace tvla {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

ParamPtr ParameterRegistry::create(const std::string& name, Tensor init) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_shared<Parameter>(name, std::move(init));
  params_.push_back(p);
  return p;
}

ParamPtr ParameterRegistry::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void ParameterRegistry::remove(const std::string& name) {
  std::erase_if(params_, [&](const ParamPtr& p) { return p->name == name; });
}

std::vector<ParamPtr> ParameterRegistry::trainable() const {
  std::vector<ParamPtr> out;
  for (const auto& p : params_) {
    if (!p->frozen()) out.push_back(p);
  }
  return out;
}

std::size_t ParameterRegistry::count_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value().size();
  return n;
}

Linear::Linear(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               bool bias, Init init)
    : p_(std::make_shared<LinearParams>()) {
  p_->name = name;
  Tensor w = init == Init::Zero ? Tensor({out, in}, 0.0)
                                : normal_tensor({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  p_->weight = reg.create(name + ".weight", std::move(w));
  if (bias) p_->bias = reg.create(name + ".bias", Tensor({out}, 0.0));
  reg.add_linear(p_);
}

Var Linear::forward(const Var& x) const {
  Var y = ops::linear(x, p_->weight->var, p_->bias ? p_->bias->var : Var());
  if (p_->lora) {
    const auto& l = *p_->lora;
    Var delta = ops::linear(ops::linear(x, l.a->var), l.b->var);
    y = ops::add(y, ops::scale(delta, l.scale()));
  }
  return y;
}

LayerNorm::LayerNorm(ParameterRegistry& reg, const std::string& name, std::size_t width)
    : gain_(reg.create(name + ".gain", Tensor({width}, 1.0))), bias_(reg.create(name + ".bias", Tensor({width}, 0.0))) {}

Var LayerNorm::forward(const Var& x) const { return ops::layer_norm(x, gain_->var, bias_->var, 1e-5); }

Mlp::Mlp(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
         Rng& rng, Init last_init)
    : fc1_(reg, name + ".fc1", in, hidden, rng), fc2_(reg, name + ".fc2", hidden, out, rng, true, last_init) {}

Var Mlp::forward(const Var& x) const { return fc2_.forward(ops::gelu(fc1_.forward(x))); }

MultiHeadAttention::MultiHeadAttention(ParameterRegistry& reg, const std::string& name, std::size_t width,
                                       std::size_t heads, Rng& rng)
    : q_(reg, name + ".q", width, width, rng),
      k_(reg, name + ".k", width, width, rng),
      v_(reg, name + ".v", width, width, rng),
      o_(reg, name + ".o", width, width, rng),
      heads_(heads) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
}

Var MultiHeadAttention::forward(const Var& x, std::size_t tokens, bool causal) const {
  Var a = ops::attention(q_.forward(x), k_.forward(x), v_.forward(x), heads_, tokens, causal);
  return o_.forward(a);
}

TransformerBlock::TransformerBlock(ParameterRegistry& reg, const std::string& name, std::size_t width,
                                   std::size_t heads, double mlp_ratio, Rng& rng)
    : ln1_(reg, name + ".ln1", width),
      attn_(reg, name + ".attn", width, heads, rng),
      ln2_(reg, name + ".ln2", width),
      mlp_(reg, name + ".mlp", width, static_cast<std::size_t>(std::lround(mlp_ratio * static_cast<double>(width))),
           width, rng) {}

Var TransformerBlock::forward(const Var& x, std::size_t tokens, bool causal, const Modulation* mod,
                              Var* normalized) const {
  Var h = ln1_.forward(x);
  if (normalized) *normalized = h;
  if (mod) h = ops::film(h, mod->gamma, mod->beta);
  Var r = ops::add(x, attn_.forward(h, tokens, causal));
  return ops::add(r, mlp_.forward(ln2_.forward(r)));
}

}  // namespace tvla
