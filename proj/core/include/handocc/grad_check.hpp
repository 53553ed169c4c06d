#pragma once

#include <functional>
#include <span>
#include <vector>

#include "handocc/autodiff.hpp"

namespace handocc {

/// Scalar objective over one or more tensor inputs, recorded on `tape`.
using Objective = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> inputs)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::size_t refined = 0;  // extra step sizes tried
};

/// Compares the tape gradient of `f` against central differences with step h.
///
/// Per element the relative error is |a - n| / max(|a|, |n|, 1e-8). Requires
/// h in [1e-7, 1e-3] and a single-element objective (UsageError otherwise).
GradCheckReport grad_check_report(const Objective& f, std::vector<Tensor> inputs, double h = 1e-6);

/// Same comparison with a fallback ladder of step sizes: an element whose error
/// at steps[0] exceeds `accept` is retried with the following steps and keeps
/// its smallest error. A large step trades round-off for truncation error, and
/// a small one avoids straddling a ReLU kink; no single step suits both.
GradCheckReport grad_check_report(const Objective& f, std::vector<Tensor> inputs, std::span<const double> steps,
                                  double accept);

double grad_check(const Objective& f, std::vector<Tensor> inputs, double h = 1e-6);

double grad_check(const std::function<ad::Var(ad::Tape&, ad::Var)>& f, const Tensor& x, double h = 1e-6);

}  // namespace handocc
