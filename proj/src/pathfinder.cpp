#include "mtbrn/pathfinder.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "mtbrn/error.hpp"
#include "text_io.hpp"

namespace mtbrn::paths {

using graphs::NodeIndex;

std::size_t effective_hops(std::size_t max_hops, std::size_t max_path_len) {
  if (max_path_len < 3) return 0;
  return std::min(max_hops, (max_path_len - 1) / 2);
}

namespace {

// Hop distance to `target` for every node within `max_hops`, following edges
// backwards. Used only to prune partial paths that cannot finish in time.
template <typename Predecessors>
std::unordered_map<NodeIndex, std::size_t> distances_to(NodeIndex target, std::size_t max_hops,
                                                        Predecessors&& predecessors) {
  std::unordered_map<NodeIndex, std::size_t> dist{{target, 0}};
  std::vector<NodeIndex> frontier{target};
  for (std::size_t d = 1; d <= max_hops && !frontier.empty(); ++d) {
    std::vector<NodeIndex> next;
    for (const auto node : frontier) {
      predecessors(node, [&](NodeIndex prev) {
        if (dist.emplace(prev, d).second) next.push_back(prev);
      });
    }
    frontier = std::move(next);
  }
  return dist;
}

std::vector<NodeIndex> distinct_sources(const std::vector<NodeIndex>& behaviors, NodeIndex target,
                                        const std::unordered_map<NodeIndex, std::size_t>& dist) {
  std::vector<NodeIndex> sources;
  for (const auto b : behaviors) {
    if (b != target && dist.contains(b)) sources.push_back(b);
  }
  std::sort(sources.begin(), sources.end());
  sources.erase(std::unique(sources.begin(), sources.end()), sources.end());
  return sources;
}

bool within_reach(const std::unordered_map<NodeIndex, std::size_t>& dist, NodeIndex node, std::size_t hops_left) {
  const auto it = dist.find(node);
  return it != dist.end() && it->second <= hops_left;
}

struct CfPartial {
  std::vector<NodeIndex> nodes;
  std::vector<double> scores;
  double product = 1.0;
};

bool cf_before(const CfPartial& a, const CfPartial& b) {
  if (a.product != b.product) return a.product > b.product;
  return a.nodes < b.nodes;
}

Path to_cf_path(const CfPartial& p) {
  Path path;
  path.source = SourceGraph::cf;
  path.hop_count = p.scores.size();
  path.tokens.reserve(p.nodes.size() + p.scores.size());
  for (std::size_t i = 0; i < p.nodes.size(); ++i) {
    if (i > 0) path.tokens.push_back({TokenKind::score, 0, p.scores[i - 1]});
    path.tokens.push_back({TokenKind::item, p.nodes[i], 0.0});
  }
  return path;
}

// Interleaved node/relation sequence; nodes sit at even positions.
struct KgPartial {
  std::vector<NodeIndex> seq;
};

bool kg_visits(const KgPartial& p, NodeIndex node) {
  for (std::size_t i = 0; i < p.seq.size(); i += 2) {
    if (p.seq[i] == node) return true;
  }
  return false;
}

bool cf_visits(const CfPartial& p, NodeIndex node) {
  return std::find(p.nodes.begin(), p.nodes.end(), node) != p.nodes.end();
}

// Unique (relation, neighbor) pairs over both edge directions.
std::vector<std::pair<NodeIndex, NodeIndex>> kg_neighbors(const graphs::KnowledgeGraph& graph, NodeIndex node) {
  std::vector<std::pair<NodeIndex, NodeIndex>> out;
  const auto& fwd = graph.out_edges(node);
  const auto& bwd = graph.in_edges(node);
  out.reserve(fwd.size() + bwd.size());
  for (const auto& e : fwd) out.emplace_back(e.relation, e.neighbor);
  for (const auto& e : bwd) out.emplace_back(e.relation, e.neighbor);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Path to_kg_path(const KgPartial& p, const graphs::KnowledgeGraph& graph) {
  Path path;
  path.source = SourceGraph::kg;
  path.hop_count = p.seq.size() / 2;
  path.tokens.reserve(p.seq.size());
  const std::size_t last = p.seq.size() - 1;
  for (std::size_t i = 0; i < p.seq.size(); ++i) {
    if (i % 2 == 1) {
      path.tokens.push_back({TokenKind::relation, p.seq[i], 0.0});
    } else {
      const bool item = i == 0 || i == last || graph.is_item(p.seq[i]);
      path.tokens.push_back({item ? TokenKind::item : TokenKind::entity, p.seq[i], 0.0});
    }
  }
  return path;
}

std::vector<NodeIndex> to_indices(const std::vector<core::ItemId>& items, const graphs::Vocabulary& vocab) {
  std::vector<NodeIndex> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    if (const auto id = vocab.find(item)) out.push_back(*id);
  }
  return out;
}

}  // namespace

std::vector<Path> extract_cf_paths(const std::vector<NodeIndex>& behaviors, NodeIndex target,
                                   const graphs::SimGraph& graph, std::size_t max_hops, std::size_t k) {
  std::vector<Path> result;
  if (k == 0 || max_hops == 0 || target >= graph.size()) return result;
  const auto dist = distances_to(target, max_hops, [&](NodeIndex node, auto&& visit) {
    for (const auto prev : graph.predecessors(node)) visit(prev);
  });

  std::vector<CfPartial> frontier;
  for (const auto s : distinct_sources(behaviors, target, dist)) frontier.push_back({{s}, {}, 1.0});

  for (std::size_t hop = 1; hop <= max_hops && !frontier.empty(); ++hop) {
    std::vector<CfPartial> next;
    std::vector<CfPartial> done;
    for (const auto& partial : frontier) {
      // Adjacency is already in descending score order.
      for (const auto& edge : graph.neighbors(partial.nodes.back())) {
        if (cf_visits(partial, edge.neighbor)) continue;
        const bool finishes = edge.neighbor == target;
        if (!finishes && !within_reach(dist, edge.neighbor, max_hops - hop)) continue;
        CfPartial extended = partial;
        extended.nodes.push_back(edge.neighbor);
        extended.scores.push_back(edge.score);
        extended.product *= edge.score;
        (finishes ? done : next).push_back(std::move(extended));
      }
    }
    std::sort(done.begin(), done.end(), cf_before);
    for (const auto& p : done) {
      if (result.size() == k) break;
      result.push_back(to_cf_path(p));
    }
    if (result.size() == k) break;
    frontier = std::move(next);
  }
  return result;
}

std::vector<Path> extract_cf_paths(const std::vector<core::ItemId>& behaviors, const core::ItemId& target,
                                   const graphs::SimGraph& graph, std::size_t max_hops, std::size_t k) {
  const auto t = graph.items().find(target);
  if (!t) return {};
  return extract_cf_paths(to_indices(behaviors, graph.items()), *t, graph, max_hops, k);
}

std::vector<Path> extract_kg_paths(const std::vector<NodeIndex>& behaviors, NodeIndex target,
                                   const graphs::KnowledgeGraph& graph, std::size_t max_hops, std::size_t k) {
  std::vector<Path> result;
  if (k == 0 || max_hops == 0 || target >= graph.nodes().size()) return result;
  const auto dist = distances_to(target, max_hops, [&](NodeIndex node, auto&& visit) {
    for (const auto& e : graph.out_edges(node)) visit(e.neighbor);
    for (const auto& e : graph.in_edges(node)) visit(e.neighbor);
  });

  std::vector<KgPartial> frontier;
  for (const auto s : distinct_sources(behaviors, target, dist)) frontier.push_back({{s}});

  for (std::size_t hop = 1; hop <= max_hops && !frontier.empty(); ++hop) {
    std::vector<KgPartial> next;
    std::vector<KgPartial> done;
    for (const auto& partial : frontier) {
      for (const auto& [relation, neighbor] : kg_neighbors(graph, partial.seq.back())) {
        if (kg_visits(partial, neighbor)) continue;
        const bool finishes = neighbor == target;
        if (!finishes && !within_reach(dist, neighbor, max_hops - hop)) continue;
        KgPartial extended = partial;
        extended.seq.push_back(relation);
        extended.seq.push_back(neighbor);
        (finishes ? done : next).push_back(std::move(extended));
      }
    }
    std::sort(done.begin(), done.end(), [](const KgPartial& a, const KgPartial& b) { return a.seq < b.seq; });
    for (const auto& p : done) {
      if (result.size() == k) break;
      result.push_back(to_kg_path(p, graph));
    }
    if (result.size() == k) break;
    frontier = std::move(next);
  }
  return result;
}

std::vector<Path> extract_kg_paths(const std::vector<core::ItemId>& behaviors, const core::ItemId& target,
                                   const graphs::KnowledgeGraph& graph, std::size_t max_hops, std::size_t k) {
  const auto t = graph.nodes().find(target);
  if (!t) return {};
  return extract_kg_paths(to_indices(behaviors, graph.nodes()), *t, graph, max_hops, k);
}

std::vector<PathSet> extract_all(const std::vector<core::Instance>& instances, const graphs::SimGraph& sim,
                                 const graphs::KnowledgeGraph& kg, const ExtractConfig& config, std::size_t threads,
                                 ExtractStats* stats) {
  const std::size_t hops_cf = effective_hops(config.max_hops_cf, config.max_path_len);
  const std::size_t hops_kg = effective_hops(config.max_hops_kg, config.max_path_len);
  std::vector<PathSet> sets(instances.size());

  const auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& inst = instances[i];
      try {
        sets[i].cf_paths = extract_cf_paths(inst.behaviors, inst.target, sim, hops_cf, config.k_cf);
        sets[i].kg_paths = extract_kg_paths(inst.behaviors, inst.target, kg, hops_kg, config.k_kg);
      } catch (const std::exception& e) {
        throw Error("path extraction failed for instance " + std::to_string(i) + ": " + e.what());
      }
    }
  };

  threads = std::max<std::size_t>(1, std::min(threads, instances.size()));
  if (threads == 1) {
    work(0, instances.size());
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (instances.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(instances.size(), t * chunk);
      const std::size_t end = std::min(instances.size(), begin + chunk);
      pool.emplace_back([&, t, begin, end] {
        try {
          work(begin, end);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  if (stats != nullptr) {
    *stats = {};
    stats->instances = sets.size();
    for (const auto& s : sets) {
      stats->cf_paths += s.cf_paths.size();
      stats->kg_paths += s.kg_paths.size();
      if (s.cf_paths.empty() && s.kg_paths.empty()) ++stats->instances_without_paths;
    }
  }
  return sets;
}

// ---------------------------------------------------------------------------
// Paths file

namespace {

const char* token_key(TokenKind kind) {
  switch (kind) {
    case TokenKind::item:
      return "i";
    case TokenKind::entity:
      return "e";
    case TokenKind::relation:
      return "r";
    case TokenKind::score:
      return "s";
  }
  return "?";
}

nlohmann::json path_to_json(const Path& path, const graphs::SimGraph& sim, const graphs::KnowledgeGraph& kg) {
  auto arr = nlohmann::json::array();
  for (const auto& tok : path.tokens) {
    nlohmann::json obj;
    if (tok.kind == TokenKind::score) {
      obj["s"] = tok.value;
    } else if (path.source == SourceGraph::cf) {
      obj[token_key(tok.kind)] = sim.items().name(tok.id);
    } else if (tok.kind == TokenKind::relation) {
      obj["r"] = kg.relations().name(tok.id);
    } else {
      obj[token_key(tok.kind)] = kg.nodes().name(tok.id);
    }
    arr.push_back(std::move(obj));
  }
  return arr;
}

std::vector<NamedPath> named_paths_from_json(const nlohmann::json& arr) {
  std::vector<NamedPath> out;
  out.reserve(arr.size());
  for (const auto& path : arr) {
    NamedPath named;
    named.reserve(path.size());
    for (const auto& tok : path) {
      if (tok.size() != 1) throw Error("path token must have exactly one key");
      const auto it = tok.begin();
      const auto& key = it.key();
      if (key == "s") {
        named.push_back({TokenKind::score, {}, it.value().get<double>()});
      } else if (key == "i") {
        named.push_back({TokenKind::item, it.value().get<std::string>(), 0.0});
      } else if (key == "e") {
        named.push_back({TokenKind::entity, it.value().get<std::string>(), 0.0});
      } else if (key == "r") {
        named.push_back({TokenKind::relation, it.value().get<std::string>(), 0.0});
      } else {
        throw Error("unknown path token key '" + key + "'");
      }
    }
    out.push_back(std::move(named));
  }
  return out;
}

}  // namespace

std::string path_set_to_json(std::size_t instance_idx, const PathSet& set, const graphs::SimGraph& sim,
                             const graphs::KnowledgeGraph& kg) {
  nlohmann::json obj;
  obj["instance_idx"] = instance_idx;
  obj["cf"] = nlohmann::json::array();
  obj["kg"] = nlohmann::json::array();
  for (const auto& p : set.cf_paths) obj["cf"].push_back(path_to_json(p, sim, kg));
  for (const auto& p : set.kg_paths) obj["kg"].push_back(path_to_json(p, sim, kg));
  return obj.dump();
}

void write_path_sets(std::ostream& out, const std::vector<PathSet>& sets, const graphs::SimGraph& sim,
                     const graphs::KnowledgeGraph& kg) {
  for (std::size_t i = 0; i < sets.size(); ++i) out << path_set_to_json(i, sets[i], sim, kg) << '\n';
}

void write_path_sets(const std::filesystem::path& path, const std::vector<PathSet>& sets,
                     const graphs::SimGraph& sim, const graphs::KnowledgeGraph& kg) {
  auto out = detail::open_output(path);
  write_path_sets(out, sets, sim, kg);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

NamedPathSet parse_path_set(const std::string& line) {
  const auto obj = nlohmann::json::parse(line);
  NamedPathSet set;
  set.instance_idx = obj.at("instance_idx").get<std::size_t>();
  set.cf = named_paths_from_json(obj.at("cf"));
  set.kg = named_paths_from_json(obj.at("kg"));
  return set;
}

void read_path_sets(std::istream& in, const std::function<void(NamedPathSet&&)>& sink, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    NamedPathSet set;
    try {
      set = parse_path_set(line);
    } catch (const std::exception& e) {
      throw ParseError(source, line_no, 0, e.what());
    }
    sink(std::move(set));
  }
}

void read_path_sets(const std::filesystem::path& path, const std::function<void(NamedPathSet&&)>& sink) {
  auto in = detail::open_input(path);
  read_path_sets(in, sink, path.string());
}

std::vector<NamedPathSet> read_path_sets(const std::filesystem::path& path) {
  std::vector<NamedPathSet> out;
  read_path_sets(path, [&](NamedPathSet&& s) { out.push_back(std::move(s)); });
  return out;
}

}  // namespace mtbrn::paths
