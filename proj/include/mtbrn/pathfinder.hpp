#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mtbrn/core.hpp"
#include "mtbrn/graphs.hpp"

namespace mtbrn::paths {

enum class TokenKind : std::uint8_t { item, entity, relation, score };

// `id` indexes the source graph's node or relation vocabulary; `value` is set
// for score tokens only.
struct PathToken {
  TokenKind kind = TokenKind::item;
  graphs::NodeIndex id = 0;
  double value = 0.0;

  bool operator==(const PathToken&) const = default;
};

enum class SourceGraph : std::uint8_t { cf, kg };

struct Path {
  std::vector<PathToken> tokens;
  SourceGraph source = SourceGraph::cf;
  std::size_t hop_count = 0;

  bool operator==(const Path&) const = default;
};

struct PathSet {
  std::vector<Path> cf_paths;
  std::vector<Path> kg_paths;

  bool operator==(const PathSet&) const = default;
};

struct ExtractConfig {
  std::size_t max_hops_cf = 3;
  std::size_t max_hops_kg = 3;
  std::size_t k_cf = 50;
  std::size_t k_kg = 50;
  std::size_t max_path_len = 7;  // token cap; 2 * hops + 1 tokens per path
};

// Hop limit after applying the token cap.
std::size_t effective_hops(std::size_t max_hops, std::size_t max_path_len);

// The k best simple paths from any behavior item to `target` with at most
// `max_hops` edges. Order: fewer hops, then larger product of edge scores,
// then the lexicographically smaller item sequence.
std::vector<Path> extract_cf_paths(const std::vector<graphs::NodeIndex>& behaviors, graphs::NodeIndex target,
                                   const graphs::SimGraph& graph, std::size_t max_hops, std::size_t k);
std::vector<Path> extract_cf_paths(const std::vector<core::ItemId>& behaviors, const core::ItemId& target,
                                   const graphs::SimGraph& graph, std::size_t max_hops, std::size_t k);

// As above over the knowledge graph, traversing edges in both directions.
// Order: fewer hops, then the lexicographically smaller interleaved
// (node, relation, node, ...) id sequence.
std::vector<Path> extract_kg_paths(const std::vector<graphs::NodeIndex>& behaviors, graphs::NodeIndex target,
                                   const graphs::KnowledgeGraph& graph, std::size_t max_hops, std::size_t k);
std::vector<Path> extract_kg_paths(const std::vector<core::ItemId>& behaviors, const core::ItemId& target,
                                   const graphs::KnowledgeGraph& graph, std::size_t max_hops, std::size_t k);

struct ExtractStats {
  std::size_t instances = 0;
  std::size_t cf_paths = 0;
  std::size_t kg_paths = 0;
  std::size_t instances_without_paths = 0;
};

// One PathSet per instance, in instance order. Results do not depend on
// `threads`.
std::vector<PathSet> extract_all(const std::vector<core::Instance>& instances, const graphs::SimGraph& sim,
                                 const graphs::KnowledgeGraph& kg, const ExtractConfig& config,
                                 std::size_t threads = 1, ExtractStats* stats = nullptr);

// Paths file (JSON Lines). Token ids are written as vocabulary names:
// {"instance_idx": n, "cf": [[{"i": a}, {"s": 0.6}, {"i": v}], ...], "kg": [...]}.
std::string path_set_to_json(std::size_t instance_idx, const PathSet& set, const graphs::SimGraph& sim,
                             const graphs::KnowledgeGraph& kg);
void write_path_sets(std::ostream& out, const std::vector<PathSet>& sets, const graphs::SimGraph& sim,
                     const graphs::KnowledgeGraph& kg);
void write_path_sets(const std::filesystem::path& path, const std::vector<PathSet>& sets,
                     const graphs::SimGraph& sim, const graphs::KnowledgeGraph& kg);

// A path as read back from a paths file, with tokens by name.
struct NamedToken {
  TokenKind kind = TokenKind::item;
  std::string name;  // empty for score tokens
  double value = 0.0;

  bool operator==(const NamedToken&) const = default;
};

using NamedPath = std::vector<NamedToken>;

struct NamedPathSet {
  std::size_t instance_idx = 0;
  std::vector<NamedPath> cf;
  std::vector<NamedPath> kg;
};

NamedPathSet parse_path_set(const std::string& line);
// Calls `sink` once per line, in file order.
void read_path_sets(std::istream& in, const std::function<void(NamedPathSet&&)>& sink,
                    const std::string& source = "<stream>");
void read_path_sets(const std::filesystem::path& path, const std::function<void(NamedPathSet&&)>& sink);
std::vector<NamedPathSet> read_path_sets(const std::filesystem::path& path);

}  // namespace mtbrn::paths
