#pragma once

#include <cstdint>
#include <vector>

#include "mtbrn/core.hpp"
#include "mtbrn/graphs.hpp"
#include "mtbrn/model.hpp"
#include "mtbrn/pathfinder.hpp"
#include "mtbrn/synth.hpp"
#include "mtbrn/train.hpp"

// In-memory version of the command-line pipeline over a synthetic world.
namespace mtbrn::pipeline {

struct Settings {
  std::size_t test_tail = 10;
  std::size_t train_window = 20;
  std::size_t top_k = graphs::kDefaultTopK;
  paths::ExtractConfig extract;
  std::size_t threads = 1;
};

struct Prepared {
  core::Split split;
  graphs::SimGraph sim;
  graphs::KnowledgeGraph kg;
  std::vector<paths::NamedPathSet> train_paths;
  std::vector<paths::NamedPathSet> test_paths;
};

Prepared prepare(const synth::World& world, const Settings& settings);

// Extracted paths converted to their by-name form.
std::vector<paths::NamedPathSet> named_paths(const std::vector<core::Instance>& instances, const graphs::SimGraph& sim,
                                             const graphs::KnowledgeGraph& kg, const paths::ExtractConfig& config,
                                             std::size_t threads = 1);

struct TrainedRun {
  std::vector<train::LossRecord> log;
  std::vector<double> test_scores;
  std::vector<int> test_labels;
  double test_auc = 0.5;
};

TrainedRun train_and_score(const Prepared& prepared, const train::TrainConfig& config, const model::ModelDims& dims);

}  // namespace mtbrn::pipeline
