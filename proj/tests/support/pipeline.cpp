#include "support/pipeline.hpp"

#include <set>

#include "mtbrn/eval.hpp"

namespace mtbrn::pipeline {

std::vector<paths::NamedPathSet> named_paths(const std::vector<core::Instance>& instances, const graphs::SimGraph& sim,
                                             const graphs::KnowledgeGraph& kg, const paths::ExtractConfig& config,
                                             std::size_t threads) {
  const auto sets = paths::extract_all(instances, sim, kg, config, threads);
  std::vector<paths::NamedPathSet> out;
  out.reserve(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    out.push_back(paths::parse_path_set(paths::path_set_to_json(i, sets[i], sim, kg)));
  }
  return out;
}

Prepared prepare(const synth::World& world, const Settings& settings) {
  Prepared p;
  const auto instances = core::build_instances(world.interactions);
  p.split = core::chronological_split(instances, settings.test_tail, settings.train_window);

  std::set<core::ItemId> items;
  for (const auto& r : world.interactions) items.insert(r.item);
  for (const auto& row : world.profiles) {
    if (row.entity_kind == "item") items.insert(row.entity_id);
  }
  const std::vector<core::ItemId> catalog(items.begin(), items.end());
  p.sim = graphs::build_sim_graph(graphs::InteractionMatrix::from_clicks(p.split.graph_source, catalog),
                                  settings.top_k);

  core::ProfileStore store;
  for (const auto& row : world.profiles) store.add(row.entity_kind, row.entity_id, row.value);
  store.attach(p.split.train.instances);
  store.attach(p.split.test.instances);

  p.kg = graphs::KnowledgeGraph(world.triples);
  p.kg.mark_items(catalog);
  p.train_paths = named_paths(p.split.train.instances, p.sim, p.kg, settings.extract, settings.threads);
  p.test_paths = named_paths(p.split.test.instances, p.sim, p.kg, settings.extract, settings.threads);
  return p;
}

TrainedRun train_and_score(const Prepared& prepared, const train::TrainConfig& config, const model::ModelDims& dims) {
  const auto& train_set = prepared.split.train.instances;
  const auto& test_set = prepared.split.test.instances;
  auto params = train::init_params(config, model::build_vocab(train_set, prepared.train_paths), dims);
  std::vector<model::EncodedInstance> train_data, test_data;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    train_data.push_back(model::encode_instance(params.embeddings, train_set[i], prepared.train_paths[i]));
  }
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    test_data.push_back(model::encode_instance(params.embeddings, test_set[i], prepared.test_paths[i]));
  }
  TrainedRun run;
  run.log = train::train(params, train_data, config).log;
  run.test_scores = model::predict_all(params, test_data);
  for (const auto& inst : test_set) run.test_labels.push_back(inst.label);
  run.test_auc = eval::auc(run.test_scores, run.test_labels).value_or(0.5);
  return run;
}

}  // namespace mtbrn::pipeline
