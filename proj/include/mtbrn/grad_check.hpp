#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mtbrn/tape.hpp"

namespace mtbrn::tensor {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so near-zero gradients are
  // compared absolutely.
  double floor = 1e-6;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t excluded_kinks = 0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded_kinks = 0;
  double tolerance = 0.0;
  bool passed = false;
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

// Compares gradients of the scalar `f` w.r.t. every element of `params`
// against central differences. `f` must read parameters through
// Tape::param / embedding_lookup. An element whose +/- step evaluations take
// a different branch than the base point (relu sign, loss clamp) is reported
// as a kink and excluded.
GradCheckReport grad_check(const std::function<Var(Tape&)>& f, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options = {});

}  // namespace mtbrn::tensor
