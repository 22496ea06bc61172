#pragma once

#include <cstdint>
#include <vector>

#include "mtbrn/grad_check.hpp"
#include "mtbrn/model.hpp"

namespace mtbrn::model {

// A tiny randomized model and two-instance batch (d=2, H=2, MLP 4/3/2, two
// paths per set) for gradient verification.
struct MicroProblem {
  std::vector<core::Instance> instances;
  std::vector<paths::NamedPathSet> path_sets;
  ModelParams params;
  std::vector<EncodedInstance> batch;
};

MicroProblem make_micro_problem(ModelVariant variant, std::uint64_t seed, double init_range = 0.5);

// Finite-difference check of the batch BCE loss w.r.t. every parameter.
tensor::GradCheckReport check_model_gradients(MicroProblem& problem, const tensor::GradCheckOptions& options = {});

}  // namespace mtbrn::model
