#include "handocc/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "handocc/error.hpp"

namespace handocc {

namespace {

double evaluate(const Objective& f, const std::vector<Tensor>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  const ad::Var out = f(tape, vars);
  if (out.value().size() != 1) {
    throw UsageError("grad_check: objective must be scalar, got " + shape_to_string(out.shape()));
  }
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check_report(const Objective& f, std::vector<Tensor> inputs, double h) {
  const double steps[] = {h};
  return grad_check_report(f, std::move(inputs), steps, 0.0);
}

GradCheckReport grad_check_report(const Objective& f, std::vector<Tensor> inputs, std::span<const double> steps,
                                  double accept) {
  if (steps.empty()) throw UsageError("grad_check: no step sizes given");
  for (double h : steps) {
    if (!(h >= 1e-7 && h <= 1e-3)) throw UsageError("grad_check: step h must lie in [1e-7, 1e-3]");
  }

  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    const ad::Var out = f(tape, vars);
    if (out.value().size() != 1) {
      throw UsageError("grad_check: objective must be scalar, got " + shape_to_string(out.shape()));
    }
    tape.backward(out);
    for (const ad::Var& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = inputs[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = analytic[k][i];
      const double saved = x[i];
      double err = std::numeric_limits<double>::infinity(), numeric = 0.0;
      for (std::size_t si = 0; si < steps.size(); ++si) {
        const double h = steps[si];
        x[i] = saved + h;
        const double up = evaluate(f, inputs);
        x[i] = saved - h;
        const double down = evaluate(f, inputs);
        x[i] = saved;
        const double n = (up - down) / (2.0 * h);
        const double e = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
        if (si > 0) ++report.refined;
        if (!(e >= err)) {
          err = e;
          numeric = n;
        }
        if (err <= accept) break;
      }
      ++report.checked;
      if (err > report.max_rel_error || !std::isfinite(err)) {
        report.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        report.worst_input = k;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const Objective& f, std::vector<Tensor> inputs, double h) {
  return grad_check_report(f, std::move(inputs), h).max_rel_error;
}

double grad_check(const std::function<ad::Var(ad::Tape&, ad::Var)>& f, const Tensor& x, double h) {
  return grad_check([&f](ad::Tape& t, std::span<const ad::Var> in) { return f(t, in[0]); }, {x}, h);
}

}  // namespace handocc
