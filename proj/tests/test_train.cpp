#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "mtbrn/error.hpp"
#include "mtbrn/micro.hpp"
#include "mtbrn/train.hpp"

using namespace mtbrn;
using namespace mtbrn::train;
using model::ModelVariant;

namespace {

model::ModelDims small_dims() {
  model::ModelDims dims;
  dims.embedding_dim = 3;
  dims.hidden = 2;
  dims.mlp = {6, 4};
  return dims;
}

// Label = sign of a numerical user feature; no paths.
struct Separable {
  std::vector<core::Instance> instances;
  std::vector<paths::NamedPathSet> path_sets;
  model::ModelVocab vocab;
};

Separable separable_set(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Separable s;
  for (std::size_t i = 0; i < n; ++i) {
    double x = u(rng);
    if (std::abs(x) < 0.05) x = x < 0 ? -0.05 : 0.05;
    core::Instance inst;
    inst.user = "u" + std::to_string(i);
    inst.target = "t" + std::to_string(i % 5);
    inst.behaviors = {"t" + std::to_string((i + 1) % 5)};
    inst.label = x > 0 ? 1 : 0;
    inst.user_features = {{"x", core::FeatureKind::numerical, 0, x}};
    s.instances.push_back(inst);
    paths::NamedPathSet set;
    set.instance_idx = i;
    s.path_sets.push_back(set);
  }
  s.vocab = model::build_vocab(s.instances, s.path_sets);
  return s;
}

std::vector<EncodedInstance> encode_all(ModelParams& params, const Separable& s) {
  std::vector<EncodedInstance> out;
  for (std::size_t i = 0; i < s.instances.size(); ++i) {
    out.push_back(model::encode_instance(params.embeddings, s.instances[i], s.path_sets[i]));
  }
  return out;
}

std::vector<Tensor> snapshot(ModelParams& params) {
  std::vector<Tensor> out;
  for (auto* p : params.parameters()) out.push_back(p->value);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// init_params

TEST(InitParams, SameSeedIsBitIdentical) {
  const auto s = separable_set(20, 1);
  TrainConfig config;
  config.seed = 9;
  auto a = init_params(config, s.vocab, small_dims());
  auto b = init_params(config, s.vocab, small_dims());
  EXPECT_EQ(snapshot(a), snapshot(b));
}

TEST(InitParams, DifferentSeedsDiffer) {
  const auto s = separable_set(20, 1);
  TrainConfig config;
  config.seed = 1;
  auto a = init_params(config, s.vocab, small_dims());
  config.seed = 2;
  auto b = init_params(config, s.vocab, small_dims());
  EXPECT_NE(snapshot(a), snapshot(b));
}

TEST(InitParams, WithinRangeAndBiasesZero) {
  const auto s = separable_set(20, 1);
  TrainConfig config;
  config.init_range = 0.05;
  for (const auto variant : model::all_variants()) {
    config.variant = variant;
    auto params = init_params(config, s.vocab, small_dims());
    bool any_nonzero = false;
    for (auto* p : params.parameters()) {
      for (double v : p->value.data()) {
        if (model::is_bias(*p)) {
          ASSERT_EQ(v, 0.0) << p->name;
        } else {
          ASSERT_GE(v, -0.05);
          ASSERT_LE(v, 0.05);
          any_nonzero |= v != 0.0;
        }
      }
    }
    EXPECT_TRUE(any_nonzero);
  }
}

TEST(InitParams, RejectsNonPositiveRange) {
  auto mp = model::make_micro_problem(ModelVariant::full, 1);
  EXPECT_THROW(init_params(mp.params, 0.0, 1), Error);
}

// ---------------------------------------------------------------------------
// adagrad_step

TEST(Adagrad, ClosedFormSteps) {
  Parameter w("w", Tensor::from_rows({{0.0, 0.0}}));
  AdagradState state({&w}, 0.001, 1e-8);
  w.grad = Tensor::from_rows({{1.0, 0.0}});
  adagrad_step({&w}, state);
  EXPECT_NEAR(w.value[0], -0.000999999995, 1e-15);
  EXPECT_EQ(w.value[1], 0.0);
  EXPECT_EQ(state.accumulators[0][1], 0.0);
  EXPECT_EQ(w.grad, Tensor(1, 2));

  const double before = w.value[0];
  w.grad = Tensor::from_rows({{1.0, 0.0}});
  adagrad_step({&w}, state);
  EXPECT_NEAR(w.value[0] - before, -0.001 / std::sqrt(2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w.value[0] - before, -0.000707107, 5e-10);
}

TEST(Adagrad, SparseTableUpdatesTouchedRowsOnly) {
  Parameter table("emb", Tensor::from_rows({{1, 1}, {2, 2}, {3, 3}}), true);
  AdagradState state({&table}, 0.1);
  // Gradient lands in row 2 only; stale values elsewhere must be ignored.
  table.grad = Tensor::from_rows({{5, 5}, {0, 0}, {1, -1}});
  table.mark_row(2);
  adagrad_step({&table}, state);
  EXPECT_EQ(table.value.row(0)[0], 1.0);
  EXPECT_EQ(table.value.row(1)[1], 2.0);
  EXPECT_NE(table.value.row(2)[0], 3.0);
  EXPECT_EQ(state.accumulators[0](0, 0), 0.0);
  EXPECT_EQ(table.touched_rows, (std::vector<std::uint8_t>{0, 0, 0}));
}

TEST(Adagrad, NonFiniteGradientThrowsWithName) {
  Parameter w("layer.w", Tensor::from_rows({{0.5}}));
  AdagradState state({&w}, 0.001);
  w.grad = Tensor::from_rows({{std::numeric_limits<double>::quiet_NaN()}});
  try {
    adagrad_step({&w}, state);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.w"), std::string::npos);
  }
  EXPECT_EQ(w.value[0], 0.5);
}

TEST(AdagradProperty, AccumulatorsNeverDecrease) {
  std::mt19937_64 rng(71);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int c = 0; c < 100; ++c) {
    Parameter w("w", Tensor(2, 3));
    Parameter e("e", Tensor(4, 2), true);
    AdagradState state({&w, &e}, 0.01);
    for (int step = 0; step < 20; ++step) {
      const auto before = state.accumulators;
      for (auto& v : w.grad.data()) v = g(rng);
      for (std::size_t r = 0; r < 4; ++r) {
        if (rng() % 2) {
          e.mark_row(r);
          for (auto& v : e.grad.row(r)) v = g(rng);
        }
      }
      adagrad_step({&w, &e}, state);
      for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t i = 0; i < before[k].size(); ++i) ASSERT_GE(state.accumulators[k][i], before[k][i]);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// train

TEST(Train, ZeroEpochsKeepsInitialization) {
  const auto s = separable_set(40, 2);
  TrainConfig config;
  config.epochs = 0;
  auto params = init_params(config, s.vocab, small_dims());
  const auto before = snapshot(params);
  const auto data = encode_all(params, s);
  const auto result = train::train(params, data, config);
  EXPECT_EQ(snapshot(params), before);
  ASSERT_EQ(result.log.size(), 1u);
  EXPECT_EQ(result.log[0].epoch, 0u);
  EXPECT_EQ(result.log[0].mean_loss, mean_loss(params, data));
}

TEST(Train, SameSeedGivesBitIdenticalRuns) {
  const auto s = separable_set(60, 3);
  TrainConfig config;
  config.epochs = 3;
  config.batch_size = 7;
  config.learning_rate = 0.05;
  config.init_range = 0.3;
  auto run = [&] {
    auto params = init_params(config, s.vocab, small_dims());
    const auto data = encode_all(params, s);
    auto result = train::train(params, data, config);
    return std::make_pair(result.log, model::checkpoint_to_string(params));
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  ASSERT_EQ(a.first.size(), 4u);
  // 60 instances in batches of 7: 9 steps per epoch, last one partial.
  EXPECT_EQ(a.first.back().step, 27u);
}

TEST(Train, SeparableSetLossDecreases) {
  const auto s = separable_set(200, 4);
  TrainConfig config;
  config.epochs = 20;
  config.learning_rate = 0.05;
  config.init_range = 0.3;
  auto params = init_params(config, s.vocab, small_dims());
  const auto data = encode_all(params, s);
  std::vector<LossRecord> seen;
  const auto result = train::train(params, data, config, [&](const LossRecord& r) { seen.push_back(r); });
  ASSERT_EQ(result.log.size(), 21u);
  EXPECT_EQ(seen, result.log);
  for (std::size_t e = 2; e < result.log.size(); ++e) {
    EXPECT_LT(result.log[e].mean_loss, result.log[e - 1].mean_loss) << "epoch " << e;
  }
  EXPECT_LT(result.log.back().mean_loss, 0.5 * result.log.front().mean_loss);
  EXPECT_LT(mean_loss(params, data), result.log.front().mean_loss);
  for (auto* p : params.parameters()) EXPECT_TRUE(p->value.all_finite()) << p->name;
}

TEST(Train, RejectsEmptyDataAndZeroBatch) {
  auto mp = model::make_micro_problem(ModelVariant::full, 1);
  TrainConfig config;
  EXPECT_THROW(train::train(mp.params, {}, config), Error);
  config.batch_size = 0;
  EXPECT_THROW(train::train(mp.params, mp.batch, config), Error);
}

TEST(LossLog, CsvLayout) {
  std::ostringstream out;
  write_loss_log(out, {{0, 0, 0.75}, {1, 12, 0.5}});
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "epoch,step,mean_loss");
  EXPECT_NE(out.str().find("\n1,12,0.5"), std::string::npos) << out.str();
}
