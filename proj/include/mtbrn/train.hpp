#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "mtbrn/model.hpp"

namespace mtbrn::train {

using model::EncodedInstance;
using model::ModelParams;
using tensor::Parameter;
using tensor::Tensor;

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  double init_range = 0.05;
  double learning_rate = 0.001;
  double epsilon = 1e-8;
  model::ModelVariant variant = model::ModelVariant::full;
};

// Weights ~ U(-init_range, init_range) drawn in parameter order from one
// seeded stream; biases are zero.
ModelParams init_params(const TrainConfig& config, const model::ModelVocab& vocab, const model::ModelDims& dims);
void init_params(ModelParams& params, double init_range, std::uint64_t seed);

struct AdagradState {
  double learning_rate = 0.001;
  double epsilon = 1e-8;
  std::vector<Tensor> accumulators;  // parallel to the parameter list

  AdagradState() = default;
  AdagradState(const std::vector<Parameter*>& params, double learning_rate, double epsilon = 1e-8);
};

// acc += g^2; value -= lr * g / sqrt(acc + eps); then zeroes the gradients.
// Sparse parameters update only rows touched since the last step.
void adagrad_step(const std::vector<Parameter*>& params, AdagradState& state);

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double mean_loss = 0.0;

  bool operator==(const LossRecord&) const = default;
};

struct TrainResult {
  // Epoch 0 is the loss of the initial parameters over the whole set; then
  // one record per epoch with the global step count and the instance-weighted
  // mean minibatch loss.
  std::vector<LossRecord> log;
};

using EpochCallback = std::function<void(const LossRecord&)>;

TrainResult train(ModelParams& params, const std::vector<EncodedInstance>& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

double mean_loss(ModelParams& params, const std::vector<EncodedInstance>& data, std::size_t batch_size = 256);

void write_loss_log(std::ostream& out, const std::vector<LossRecord>& log);
void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& log);

}  // namespace mtbrn::train
