#include "mtbrn/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mtbrn::tensor {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe evaluate(const std::function<Var(Tape&)>& f) {
  Tape tape(false);
  const Var out = f(tape);
  return {out.value()[0], tape.kink_signature()};
}

}  // namespace

GradCheckReport grad_check(const std::function<Var(Tape&)>& f, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options) {
  for (auto* p : params) p->zero_grad();
  std::uint64_t base_signature = 0;
  {
    Tape tape;
    const Var loss = f(tape);
    base_signature = tape.kink_signature();
    tape.backward(loss);
  }

  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (auto* p : params) {
    ParamCheck check;
    check.name = p->name;
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double original = p->value[i];
      p->value[i] = original + options.step;
      const Probe plus = evaluate(f);
      p->value[i] = original - options.step;
      const Probe minus = evaluate(f);
      p->value[i] = original;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++check.excluded_kinks;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.step);
      const double err = relative_error(analytic[i], numeric, options.floor);
      if (err > check.max_rel_error || check.checked == 0) {
        if (err > check.max_rel_error) check.worst_index = i;
        check.max_rel_error = std::max(check.max_rel_error, err);
      }
      ++check.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.checked += check.checked;
    report.excluded_kinks += check.excluded_kinks;
    report.params.push_back(std::move(check));
  }
  for (auto* p : params) p->zero_grad();
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace mtbrn::tensor
