#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "mtbrn/core.hpp"
#include "mtbrn/graphs.hpp"

namespace mtbrn::synth {

struct SyntheticWorldConfig {
  std::size_t n_users = 1000;
  std::size_t n_items = 300;
  std::size_t n_entities = 60;   // the first theme_count are theme entities
  std::size_t n_relations = 4;   // relation 0 links items to their theme
  std::size_t theme_count = 8;
  std::size_t cluster_count = 8;  // latent co-click groups, independent of themes
  std::size_t impressions_per_user = 84;
  std::size_t preferred_themes = 2;
  std::size_t preferred_clusters = 2;
  double bias = -2.0;
  double w_kg = 2.5;
  double w_cf = 2.5;
  double w_noise = 1.0;
  // Split used only for the Bayes AUC reported in the manifest.
  std::size_t report_test_tail = 10;
  std::uint64_t seed = 42;
};

void validate(const SyntheticWorldConfig& config);

struct ItemTruth {
  core::ItemId item;
  std::size_t theme = 0;
  std::size_t cluster = 0;

  bool operator==(const ItemTruth&) const = default;
};

struct ImpressionTruth {
  core::UserId user;
  core::ItemId item;
  std::int64_t timestamp = 0;
  double probability = 0.0;

  bool operator==(const ImpressionTruth&) const = default;
};

class GroundTruth {
 public:
  GroundTruth() = default;
  GroundTruth(std::vector<ItemTruth> items, std::vector<ImpressionTruth> impressions);

  const std::vector<ItemTruth>& items() const { return items_; }
  const std::vector<ImpressionTruth>& impressions() const { return impressions_; }
  // Throws when the impression is unknown.
  double probability(const core::UserId& user, const core::ItemId& item, std::int64_t timestamp) const;

 private:
  std::vector<ItemTruth> items_;
  std::vector<ImpressionTruth> impressions_;
  std::map<std::tuple<std::string, std::string, std::int64_t>, double> index_;
};

struct ProfileRow {
  std::string entity_kind;  // user | item
  std::string entity_id;
  core::FeatureValue value;
};

struct World {
  std::vector<core::Interaction> interactions;
  std::vector<graphs::Triple> triples;
  std::vector<ProfileRow> profiles;
  GroundTruth truth;
};

// Items carry a theme (linked in the knowledge graph through relation 0 to a
// theme entity, plus 1-2 attribute entities) and an independent co-click
// cluster. Each user draws targets from preferred themes and clusters; click
// probability is sigmoid(bias + w_kg * kg + w_cf * cf + w_noise * eps) where
// kg and cf are 1 - 2^-n over the n behaviors sharing the target's theme or
// cluster, eps ~ N(0,1).
World generate_world(const SyntheticWorldConfig& config);

struct WorldFiles {
  std::filesystem::path interactions;
  std::filesystem::path triples;
  std::filesystem::path profiles;
  std::filesystem::path ground_truth;
  std::filesystem::path item_truth;
  std::filesystem::path manifest;
};

WorldFiles world_files(const std::filesystem::path& dir);

// Writes every file of the world plus world_manifest.json (config, Bayes AUC
// and file hashes). Returns the manifest's Bayes AUC over the report split.
double write_world(const World& world, const SyntheticWorldConfig& config, const std::filesystem::path& dir);

GroundTruth load_ground_truth(const std::filesystem::path& impressions, const std::filesystem::path& items);

// AUC of the true click probabilities on the instances' labels.
double bayes_oracle_auc(const GroundTruth& truth, const std::vector<core::Instance>& instances);

}  // namespace mtbrn::synth
