#include "tvla/optim.hpp"

#include <cmath>

#include "tvla/errors.hpp"

namespace tvla {

void adam_step(std::span<const ParamPtr> params, AdamState& state) {
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const auto& p : params) {
      state.m.emplace_back(p->value().shape(), 0.0);
      state.v.emplace_back(p->value().shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("Adam state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                         std::to_string(params.size()));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (state.m[i].shape() != p.value().shape()) {
      throw DimensionError("Adam moment shape mismatch for " + p.name);
    }
    if (p.frozen()) continue;
    const Tensor g = p.var.grad();
    Tensor& w = p.mutable_value();
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void zero_grad(std::span<const ParamPtr> params) {
  for (const auto& p : params) p->var.zero_grad();
}

double clip_grad_norm(std::span<const ParamPtr> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p->frozen() || p->var.node()->grad.size() == 0) continue;
    for (double g : p->var.node()->grad.values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (p->frozen() || p->var.node()->grad.size() == 0) continue;
      for (double& g : p->var.node()->grad.values()) g *= s;
    }
  }
  return norm;
}

}  // namespace tvla
