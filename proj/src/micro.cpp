#include "mtbrn/micro.hpp"

#include <random>

#include "mtbrn/train.hpp"

namespace mtbrn::model {

namespace {

using paths::NamedPath;
using paths::NamedToken;
using paths::TokenKind;

NamedToken item(const std::string& name) { return {TokenKind::item, name, 0.0}; }
NamedToken entity(const std::string& name) { return {TokenKind::entity, name, 0.0}; }
NamedToken relation(const std::string& name) { return {TokenKind::relation, name, 0.0}; }
NamedToken score(double v) { return {TokenKind::score, "", v}; }

}  // namespace

MicroProblem make_micro_problem(ModelVariant variant, std::uint64_t seed, double init_range) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  std::uniform_int_distribution<int> pick(0, 5);
  auto it = [&](int i) { return "i" + std::to_string(i); };

  MicroProblem mp;
  for (int n = 0; n < 2; ++n) {
    core::Instance inst;
    inst.user = "u" + std::to_string(n);
    inst.target = it(n);
    inst.behaviors = {it(2 + n), it(4), it(5)};
    inst.label = n == 0 ? 1 : 0;
    inst.user_features = {{"segment", core::FeatureKind::sparse, static_cast<std::uint64_t>(n), 0.0},
                          {"activity", core::FeatureKind::numerical, 0, unit(rng) * 2.0}};
    inst.target_features = {{"brand", core::FeatureKind::sparse, static_cast<std::uint64_t>(pick(rng) % 2), 0.0},
                            {"price", core::FeatureKind::numerical, 0, unit(rng)}};
    mp.instances.push_back(std::move(inst));

    paths::NamedPathSet set;
    set.instance_idx = static_cast<std::size_t>(n);
    set.cf.push_back(NamedPath{item(it(2 + n)), score(unit(rng)), item(it(n))});
    set.cf.push_back(NamedPath{item(it(4)), score(unit(rng)), item(it(pick(rng))), score(unit(rng)), item(it(n))});
    set.kg.push_back(NamedPath{item(it(5)), relation("r0"), entity("e" + std::to_string(n)), relation("r0"),
                               item(it(n))});
    set.kg.push_back(NamedPath{item(it(4)), relation("r1"), entity("e2"), relation("r0"), item(it(pick(rng))),
                               relation("r1"), item(it(n))});
    mp.path_sets.push_back(std::move(set));
  }

  ModelDims dims;
  dims.embedding_dim = 2;
  dims.hidden = 2;
  dims.mlp = {4, 3, 2};
  train::TrainConfig config;
  config.variant = variant;
  config.seed = seed;
  config.init_range = init_range;
  mp.params = train::init_params(config, build_vocab(mp.instances, mp.path_sets), dims);
  // Non-zero biases so their gradients are exercised away from the origin.
  std::uniform_real_distribution<double> bias(-init_range, init_range);
  for (auto* p : mp.params.parameters()) {
    if (is_bias(*p)) {
      for (auto& v : p->value.data()) v = bias(rng);
    }
  }
  for (std::size_t n = 0; n < mp.instances.size(); ++n) {
    mp.batch.push_back(encode_instance(mp.params.embeddings, mp.instances[n], mp.path_sets[n]));
  }
  return mp;
}

tensor::GradCheckReport check_model_gradients(MicroProblem& problem, const tensor::GradCheckOptions& options) {
  std::vector<const EncodedInstance*> batch;
  std::vector<double> labels;
  for (const auto& e : problem.batch) {
    batch.push_back(&e);
    labels.push_back(e.label);
  }
  auto f = [&](tensor::Tape& tape) { return bce_loss(forward(tape, problem.params, batch), labels); };
  return tensor::grad_check(f, problem.params.parameters(), options);
}

}  // namespace mtbrn::model
