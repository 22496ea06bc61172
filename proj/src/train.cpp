#include "mtbrn/train.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "mtbrn/error.hpp"
#include "text_io.hpp"

namespace mtbrn::train {

void init_params(ModelParams& params, double init_range, std::uint64_t seed) {
  if (!(init_range > 0.0)) throw Error("init_range must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-init_range, init_range);
  for (auto* p : params.parameters()) {
    if (model::is_bias(*p)) {
      p->value.fill(0.0);
      continue;
    }
    for (auto& v : p->value.data()) v = dist(rng);
  }
}

ModelParams init_params(const TrainConfig& config, const model::ModelVocab& vocab, const model::ModelDims& dims) {
  ModelParams params(vocab, dims, config.variant);
  init_params(params, config.init_range, config.seed);
  return params;
}

AdagradState::AdagradState(const std::vector<Parameter*>& params, double lr, double eps)
    : learning_rate(lr), epsilon(eps) {
  for (const auto* p : params) accumulators.emplace_back(p->value.rows(), p->value.cols());
}

namespace {

void check_finite(const Parameter& p) {
  if (!p.grad.all_finite()) throw NumericError("non-finite gradient in parameter " + p.name);
}

void update(double& value, double& acc, double g, double lr, double eps) {
  acc += g * g;
  value -= lr * g / std::sqrt(acc + eps);
}

}  // namespace

void adagrad_step(const std::vector<Parameter*>& params, AdagradState& state) {
  if (state.accumulators.size() != params.size()) {
    throw Error("adagrad state tracks " + std::to_string(state.accumulators.size()) + " parameters, got " +
                std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) check_finite(*params[k]);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& acc = state.accumulators[k];
    if (!acc.same_shape(p.value)) throw ShapeError("adagrad accumulator shape mismatch for " + p.name);
    if (p.sparse_rows) {
      const std::size_t cols = p.value.cols();
      for (std::size_t r = 0; r < p.value.rows(); ++r) {
        if (!p.touched_rows[r]) continue;
        for (std::size_t c = 0; c < cols; ++c) {
          update(p.value(r, c), acc(r, c), p.grad(r, c), state.learning_rate, state.epsilon);
          p.grad(r, c) = 0.0;
        }
        p.touched_rows[r] = 0;
      }
    } else {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        update(p.value[i], acc[i], p.grad[i], state.learning_rate, state.epsilon);
      }
      p.grad.fill(0.0);
    }
  }
}

double mean_loss(ModelParams& params, const std::vector<EncodedInstance>& data, std::size_t batch_size) {
  if (data.empty()) throw Error("mean_loss: empty dataset");
  const auto preds = model::predict_all(params, data, batch_size);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double y = data[i].label;
    total += y * std::log(std::max(preds[i], tensor::kLogClamp)) +
             (1.0 - y) * std::log(std::max(1.0 - preds[i], tensor::kLogClamp));
  }
  return -total / static_cast<double>(data.size());
}

TrainResult train(ModelParams& params, const std::vector<EncodedInstance>& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  if (config.batch_size == 0) throw Error("batch_size must be at least 1");
  if (data.empty()) throw Error("train: empty dataset");
  const auto plist = params.parameters();
  for (auto* p : plist) p->zero_grad();
  AdagradState state(plist, config.learning_rate, config.epsilon);

  TrainResult result;
  result.log.push_back({0, 0, mean_loss(params, data)});
  if (on_epoch) on_epoch(result.log.back());

  std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<const EncodedInstance*> batch;
      std::vector<double> labels;
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(&data[order[i]]);
        labels.push_back(data[order[i]].label);
      }
      tensor::Tape tape;
      const auto loss = model::bce_loss(model::forward(tape, params, batch), labels);
      tape.backward(loss);
      adagrad_step(plist, state);
      weighted += loss.value()[0] * static_cast<double>(batch.size());
      ++step;
    }
    result.log.push_back({epoch, step, weighted / static_cast<double>(data.size())});
    if (on_epoch) on_epoch(result.log.back());
  }
  return result;
}

void write_loss_log(std::ostream& out, const std::vector<LossRecord>& log) {
  out << "epoch,step,mean_loss\n";
  for (const auto& r : log) out << r.epoch << ',' << r.step << ',' << detail::format_fixed(r.mean_loss, 9) << '\n';
}

void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
  auto out = detail::open_output(path);
  write_loss_log(out, log);
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace mtbrn::train
