#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mtbrn::core {

using UserId = std::string;
using ItemId = std::string;

inline constexpr std::size_t kDefaultMaxBehaviors = 10;

struct Interaction {
  UserId user;
  ItemId item;
  std::int64_t timestamp = 0;
  int label = 0;

  bool operator==(const Interaction&) const = default;
};

enum class FeatureKind { sparse, numerical };

const char* to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& text);

struct FeatureValue {
  std::string field;
  FeatureKind kind = FeatureKind::sparse;
  std::uint64_t token = 0;  // sparse only
  double value = 0.0;       // numerical only

  bool operator==(const FeatureValue&) const = default;
};

struct Instance {
  UserId user;
  ItemId target;
  std::int64_t timestamp = 0;
  std::vector<ItemId> behaviors;  // oldest -> newest
  int label = 0;
  std::vector<FeatureValue> user_features;
  std::vector<FeatureValue> target_features;

  bool operator==(const Instance&) const = default;
};

enum class DatasetRole { train, test, graph_source };

struct Dataset {
  DatasetRole role = DatasetRole::train;
  std::vector<Instance> instances;
};

struct Split {
  Dataset train{DatasetRole::train, {}};
  Dataset test{DatasetRole::test, {}};
  Dataset graph_source{DatasetRole::graph_source, {}};
};

// user -> features and item -> features, plus the declared field order per
// entity kind (first appearance in the file).
struct FieldSpec {
  std::string field;
  FeatureKind kind = FeatureKind::sparse;

  bool operator==(const FieldSpec&) const = default;
};

class ProfileStore {
 public:
  void add(const std::string& entity_kind, const std::string& entity_id, FeatureValue value);

  const std::vector<FeatureValue>& user(const UserId& id) const;
  const std::vector<FeatureValue>& item(const ItemId& id) const;

  const std::vector<FieldSpec>& user_fields() const { return user_fields_; }
  const std::vector<FieldSpec>& item_fields() const { return item_fields_; }

  // Fills user_features / target_features of every instance.
  void attach(std::vector<Instance>& instances) const;

 private:
  std::map<std::string, std::vector<FeatureValue>> users_;
  std::map<std::string, std::vector<FeatureValue>> items_;
  std::vector<FieldSpec> user_fields_;
  std::vector<FieldSpec> item_fields_;
};

std::vector<Interaction> parse_interactions(const std::filesystem::path& path);
std::vector<Interaction> parse_interactions(std::istream& in, const std::string& source = "<stream>");
void write_interactions(std::ostream& out, const std::vector<Interaction>& log);

ProfileStore parse_profiles(const std::filesystem::path& path);
ProfileStore parse_profiles(std::istream& in, const std::string& source = "<stream>");

// One instance per interaction. Output is ordered by user id, then timestamp,
// then file order. Behaviors are the user's most recent clicks strictly before
// the instance timestamp, never including the target item.
std::vector<Instance> build_instances(const std::vector<Interaction>& log,
                                      std::size_t max_behaviors = kDefaultMaxBehaviors);

// Per user: the last `test_tail` instances go to test, the preceding
// `train_window` to train and the rest to graph-source. Users with fewer than
// `test_tail` instances go entirely to graph-source. Input must be grouped by
// user and time-ordered within each user (as produced by build_instances).
Split chronological_split(const std::vector<Instance>& instances, std::size_t test_tail,
                          std::size_t train_window);

struct NegativeSampleResult {
  std::vector<Instance> instances;  // each positive followed by its negatives
  std::size_t short_pools = 0;      // positives whose eligible pool was < ratio
};

// Draws `ratio` negatives per positive from the items the user never
// interacted with. Deterministic in `seed`.
NegativeSampleResult negative_sample(const std::vector<Instance>& positives,
                                     const std::set<ItemId>& item_pool,
                                     const std::map<UserId, std::set<ItemId>>& interacted,
                                     std::size_t ratio, std::uint64_t seed);

std::map<UserId, std::set<ItemId>> interacted_items(const std::vector<Interaction>& log);

void write_instances(std::ostream& out, const std::vector<Instance>& instances);
void write_instances(const std::filesystem::path& path, const std::vector<Instance>& instances);
std::vector<Instance> read_instances(std::istream& in, const std::string& source = "<stream>");
std::vector<Instance> read_instances(const std::filesystem::path& path);

}  // namespace mtbrn::core
