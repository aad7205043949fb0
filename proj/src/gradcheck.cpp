#include "tvla/gradcheck.hpp"

#include <cmath>

#include "tvla/errors.hpp"

namespace tvla {

namespace {

double evaluate(const std::function<Var()>& f) {
  NoGradGuard guard;
  const double v = f().value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: objective evaluated to a non-finite value");
  return v;
}

}  // namespace

GradCheckReport grad_check_report(const std::function<Var()>& f, std::span<const Var> leaves, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw PreconditionError("grad_check eps must lie in [1e-7, 1e-3]");
  std::vector<Var> vars(leaves.begin(), leaves.end());
  for (auto& v : vars) v.zero_grad();
  Var loss = f();
  if (!std::isfinite(loss.value().item())) throw NumericError("grad_check: objective is non-finite");
  backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(vars.size());
  for (auto& v : vars) analytic.push_back(v.grad());

  GradCheckReport report;
  for (std::size_t l = 0; l < vars.size(); ++l) {
    Tensor& w = vars[l].mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + eps;
      const double fp = evaluate(f);
      w[i] = saved - eps;
      const double fm = evaluate(f);
      w[i] = saved;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ad = analytic[l][i];
      const double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      ++report.coordinates;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_leaf = l;
        report.worst_index = i;
      }
    }
  }
  for (auto& v : vars) v.zero_grad();
  return report;
}

double grad_check(const std::function<Var()>& f, std::span<const Var> leaves, double eps) {
  return grad_check_report(f, leaves, eps).max_rel_error;
}

double grad_check(const std::function<Var()>& f, std::span<const ParamPtr> params, double eps) {
  std::vector<Var> leaves;
  for (const auto& p : params) {
    if (!p->frozen()) leaves.push_back(p->var);
  }
  return grad_check(f, leaves, eps);
}

}  // namespace tvla
