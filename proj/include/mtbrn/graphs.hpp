#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtbrn/core.hpp"

namespace mtbrn::graphs {

using NodeIndex = std::uint32_t;

// Dense ids assigned in lexicographic order of the names, so comparing ids
// compares names.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names);

  std::optional<NodeIndex> find(const std::string& name) const;
  NodeIndex at(const std::string& name) const;
  const std::string& name(NodeIndex id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const Vocabulary& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, NodeIndex> index_;
};

// Binary user x item matrix stored column-major: for every item the strictly
// increasing list of users who interacted with it.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;

  // `catalog` lists items that must have a column even without interactions.
  static InteractionMatrix from_pairs(const std::vector<std::pair<core::UserId, core::ItemId>>& pairs,
                                      const std::vector<core::ItemId>& catalog = {});
  // Clicked (label = 1) instances of a dataset.
  static InteractionMatrix from_clicks(const core::Dataset& dataset, const std::vector<core::ItemId>& catalog = {});

  std::size_t user_count() const { return users_.size(); }
  std::size_t item_count() const { return items_.size(); }
  const Vocabulary& users() const { return users_; }
  const Vocabulary& items() const { return items_; }
  const std::vector<NodeIndex>& column(NodeIndex item) const { return columns_.at(item); }

 private:
  Vocabulary users_;
  Vocabulary items_;
  std::vector<std::vector<NodeIndex>> columns_;
};

// Cosine similarity of two item columns; 0 when either column is empty.
double cosine_similarity(const InteractionMatrix& matrix, NodeIndex i, NodeIndex j);
double cosine_similarity(const InteractionMatrix& matrix, const core::ItemId& i, const core::ItemId& j);

struct SimEdge {
  NodeIndex neighbor = 0;
  double score = 0.0;

  bool operator==(const SimEdge&) const = default;
};

// Item-item similarity graph: per item its top-k neighbors, score descending,
// ties by neighbor id ascending.
class SimGraph {
 public:
  SimGraph() = default;
  SimGraph(Vocabulary items, std::vector<std::vector<SimEdge>> adjacency);

  const Vocabulary& items() const { return items_; }
  std::size_t size() const { return adjacency_.size(); }
  const std::vector<SimEdge>& neighbors(NodeIndex item) const { return adjacency_.at(item); }
  // Items that list `item` as a neighbor.
  const std::vector<NodeIndex>& predecessors(NodeIndex item) const { return reverse_.at(item); }
  std::size_t edge_count() const;

  bool operator==(const SimGraph& other) const {
    return items_ == other.items_ && adjacency_ == other.adjacency_;
  }

 private:
  Vocabulary items_;
  std::vector<std::vector<SimEdge>> adjacency_;
  std::vector<std::vector<NodeIndex>> reverse_;
};

inline constexpr std::size_t kDefaultTopK = 5;

// Output-sensitive: only pairs sharing at least one user are scored.
SimGraph build_sim_graph(const InteractionMatrix& matrix, std::size_t top_k = kDefaultTopK);

// TSV `item \t neighbor \t score`, score with 6 decimals.
void save_sim_graph(std::ostream& out, const SimGraph& graph);
void save_sim_graph(const std::filesystem::path& path, const SimGraph& graph);
SimGraph load_sim_graph(std::istream& in, const std::string& source = "<stream>");
SimGraph load_sim_graph(const std::filesystem::path& path);

enum class Direction : std::uint8_t { forward, backward };

struct KgEdge {
  NodeIndex relation = 0;
  NodeIndex neighbor = 0;
  Direction direction = Direction::forward;

  bool operator==(const KgEdge&) const = default;
};

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;

  auto operator<=>(const Triple&) const = default;
};

class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  // Duplicate triples are stored once.
  explicit KnowledgeGraph(const std::vector<Triple>& triples);

  const Vocabulary& nodes() const { return nodes_; }
  const Vocabulary& relations() const { return relations_; }
  std::size_t triple_count() const { return triple_count_; }

  // Sorted by (relation, neighbor).
  const std::vector<KgEdge>& out_edges(NodeIndex node) const { return out_index_.at(node); }
  const std::vector<KgEdge>& in_edges(NodeIndex node) const { return in_index_.at(node); }

  void mark_items(const std::vector<core::ItemId>& items);
  bool is_item(NodeIndex node) const { return item_nodes_.at(node); }

  std::vector<Triple> triples() const;

  bool operator==(const KnowledgeGraph& other) const;

 private:
  Vocabulary nodes_;
  Vocabulary relations_;
  std::vector<std::vector<KgEdge>> out_index_;
  std::vector<std::vector<KgEdge>> in_index_;
  std::vector<bool> item_nodes_;
  std::size_t triple_count_ = 0;
};

std::vector<Triple> parse_triples(std::istream& in, const std::string& source = "<stream>");
KnowledgeGraph load_triples(std::istream& in, const std::string& source = "<stream>");
KnowledgeGraph load_triples(const std::filesystem::path& path);
void save_triples(std::ostream& out, const KnowledgeGraph& graph);
void save_triples(const std::filesystem::path& path, const KnowledgeGraph& graph);

}  // namespace mtbrn::graphs
