#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tvla/autodiff.hpp"

namespace tvla {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
};

// Compares reverse-mode gradients of the scalar f against central
// differences, coordinate by coordinate. The per-coordinate error is
// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|); the maximum is reported.
// f must rebuild its graph from the current leaf values on every call.
GradCheckReport grad_check_report(const std::function<Var()>& f, std::span<const Var> leaves, double eps = 1e-5);

double grad_check(const std::function<Var()>& f, std::span<const Var> leaves, double eps = 1e-5);

// Convenience overload over the trainable (non-frozen) parameters.
double grad_check(const std::function<Var()>& f, std::span<const ParamPtr> params, double eps = 1e-5);

}  // namespace tvla
