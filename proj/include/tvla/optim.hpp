#pragma once

#include <span>
#include <vector>

#include "tvla/autodiff.hpp"

namespace tvla {

struct AdamState {
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over `params` (moments are indexed like `params`).
// Frozen parameters are skipped and left bit-identical.
void adam_step(std::span<const ParamPtr> params, AdamState& state);

void zero_grad(std::span<const ParamPtr> params);

// Rescales gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<const ParamPtr> params, double max_norm);

}  // namespace tvla
