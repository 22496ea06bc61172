#include "mtbrn/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

#include "mtbrn/error.hpp"
#include "text_io.hpp"

namespace mtbrn::graphs {

Vocabulary::Vocabulary(std::vector<std::string> names) : names_(std::move(names)) {
  std::sort(names_.begin(), names_.end());
  names_.erase(std::unique(names_.begin(), names_.end()), names_.end());
  index_.reserve(names_.size());
  for (std::size_t i = 0; i < names_.size(); ++i) index_.emplace(names_[i], static_cast<NodeIndex>(i));
}

std::optional<NodeIndex> Vocabulary::find(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

NodeIndex Vocabulary::at(const std::string& name) const {
  const auto id = find(name);
  if (!id) throw Error("unknown id '" + name + "'");
  return *id;
}

// ---------------------------------------------------------------------------
// Interaction matrix and cosine similarity

InteractionMatrix InteractionMatrix::from_pairs(const std::vector<std::pair<core::UserId, core::ItemId>>& pairs,
                                                const std::vector<core::ItemId>& catalog) {
  std::vector<std::string> user_names;
  std::vector<std::string> item_names(catalog.begin(), catalog.end());
  for (const auto& [user, item] : pairs) {
    user_names.push_back(user);
    item_names.push_back(item);
  }
  InteractionMatrix m;
  m.users_ = Vocabulary(std::move(user_names));
  m.items_ = Vocabulary(std::move(item_names));
  m.columns_.assign(m.items_.size(), {});
  for (const auto& [user, item] : pairs) m.columns_[m.items_.at(item)].push_back(m.users_.at(user));
  for (auto& col : m.columns_) {
    std::sort(col.begin(), col.end());
    col.erase(std::unique(col.begin(), col.end()), col.end());
  }
  return m;
}

InteractionMatrix InteractionMatrix::from_clicks(const core::Dataset& dataset, const std::vector<core::ItemId>& catalog) {
  std::vector<std::pair<core::UserId, core::ItemId>> pairs;
  for (const auto& inst : dataset.instances) {
    if (inst.label == 1) pairs.emplace_back(inst.user, inst.target);
  }
  return from_pairs(pairs, catalog);
}

namespace {

std::size_t intersection_size(const std::vector<NodeIndex>& a, const std::vector<NodeIndex>& b) {
  std::size_t count = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++count;
      ++ia;
      ++ib;
    }
  }
  return count;
}

double cosine_from_counts(std::size_t co, std::size_t ni, std::size_t nj) {
  if (ni == 0 || nj == 0) return 0.0;
  return static_cast<double>(co) / std::sqrt(static_cast<double>(ni) * static_cast<double>(nj));
}

}  // namespace

double cosine_similarity(const InteractionMatrix& matrix, NodeIndex i, NodeIndex j) {
  if (i >= matrix.item_count() || j >= matrix.item_count()) throw Error("cosine_similarity: unknown item index");
  if (i == j) throw Error("cosine_similarity: items must differ");
  const auto& ci = matrix.column(i);
  const auto& cj = matrix.column(j);
  return cosine_from_counts(intersection_size(ci, cj), ci.size(), cj.size());
}

double cosine_similarity(const InteractionMatrix& matrix, const core::ItemId& i, const core::ItemId& j) {
  return cosine_similarity(matrix, matrix.items().at(i), matrix.items().at(j));
}

// ---------------------------------------------------------------------------
// Similarity graph

namespace {

void sort_edges(std::vector<SimEdge>& edges) {
  std::sort(edges.begin(), edges.end(), [](const SimEdge& a, const SimEdge& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.neighbor < b.neighbor;
  });
}

}  // namespace

SimGraph::SimGraph(Vocabulary items, std::vector<std::vector<SimEdge>> adjacency)
    : items_(std::move(items)), adjacency_(std::move(adjacency)), reverse_(adjacency_.size()) {
  if (adjacency_.size() != items_.size()) throw Error("SimGraph: adjacency size does not match vocabulary");
  for (NodeIndex i = 0; i < adjacency_.size(); ++i) {
    for (const auto& e : adjacency_[i]) {
      if (e.neighbor >= adjacency_.size()) throw Error("SimGraph: neighbor index out of range");
      reverse_[e.neighbor].push_back(i);
    }
  }
}

std::size_t SimGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& list : adjacency_) n += list.size();
  return n;
}

SimGraph build_sim_graph(const InteractionMatrix& matrix, std::size_t top_k) {
  const std::size_t n_items = matrix.item_count();
  // Row-major view: user -> items.
  std::vector<std::vector<NodeIndex>> rows(matrix.user_count());
  for (NodeIndex item = 0; item < n_items; ++item) {
    for (const auto user : matrix.column(item)) rows[user].push_back(item);
  }

  std::vector<std::vector<SimEdge>> adjacency(n_items);
  std::vector<std::uint32_t> co_counts(n_items, 0);
  std::vector<NodeIndex> touched;
  for (NodeIndex i = 0; i < n_items; ++i) {
    touched.clear();
    for (const auto user : matrix.column(i)) {
      for (const auto j : rows[user]) {
        if (j == i) continue;
        if (co_counts[j]++ == 0) touched.push_back(j);
      }
    }
    // Ranked on exact counts: for a fixed i, score_j orders as co_j^2 / n_j,
    // so equal scores tie exactly and fall back to the neighbor id.
    struct Candidate {
      NodeIndex j;
      std::uint64_t co;
      std::uint64_t nj;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(touched.size());
    for (const auto j : touched) {
      candidates.push_back({j, co_counts[j], matrix.column(j).size()});
      co_counts[j] = 0;
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      const auto lhs = static_cast<unsigned __int128>(a.co) * a.co * b.nj;
      const auto rhs = static_cast<unsigned __int128>(b.co) * b.co * a.nj;
      if (lhs != rhs) return lhs > rhs;
      return a.j < b.j;
    });
    if (candidates.size() > top_k) candidates.resize(top_k);
    const std::size_t ni = matrix.column(i).size();
    auto& edges = adjacency[i];
    edges.reserve(candidates.size());
    for (const auto& c : candidates) edges.push_back({c.j, cosine_from_counts(c.co, ni, c.nj)});
  }
  return SimGraph(matrix.items(), std::move(adjacency));
}

void save_sim_graph(std::ostream& out, const SimGraph& graph) {
  for (NodeIndex i = 0; i < graph.size(); ++i) {
    for (const auto& e : graph.neighbors(i)) {
      out << graph.items().name(i) << '\t' << graph.items().name(e.neighbor) << '\t'
          << detail::format_fixed(e.score, 6) << '\n';
    }
  }
}

void save_sim_graph(const std::filesystem::path& path, const SimGraph& graph) {
  auto out = detail::open_output(path);
  save_sim_graph(out, graph);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

SimGraph load_sim_graph(std::istream& in, const std::string& source) {
  struct Row {
    std::string item;
    std::string neighbor;
    double score;
  };
  std::vector<Row> rows;
  std::vector<std::string> names;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_tabs(detail::strip_cr(line));
    if (fields.size() != 3) throw ParseError(source, line_no, 0, "expected item, neighbor, score");
    if (fields[0].empty()) throw ParseError(source, line_no, 1, "empty item id");
    if (fields[1].empty()) throw ParseError(source, line_no, 2, "empty neighbor id");
    if (fields[0] == fields[1]) throw ParseError(source, line_no, 2, "self edge");
    const auto score = detail::parse_real(fields[2]);
    if (!score || *score < 0.0 || *score > 1.0) throw ParseError(source, line_no, 3, "score must be in [0,1]");
    rows.push_back({std::string(fields[0]), std::string(fields[1]), *score});
    names.emplace_back(fields[0]);
    names.emplace_back(fields[1]);
  }
  Vocabulary items(std::move(names));
  std::vector<std::vector<SimEdge>> adjacency(items.size());
  for (const auto& row : rows) adjacency[items.at(row.item)].push_back({items.at(row.neighbor), row.score});
  for (auto& edges : adjacency) sort_edges(edges);
  return SimGraph(std::move(items), std::move(adjacency));
}

SimGraph load_sim_graph(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return load_sim_graph(in, path.string());
}

// ---------------------------------------------------------------------------
// Knowledge graph

KnowledgeGraph::KnowledgeGraph(const std::vector<Triple>& triples) {
  std::set<Triple> unique(triples.begin(), triples.end());
  std::vector<std::string> node_names;
  std::vector<std::string> relation_names;
  for (const auto& t : unique) {
    node_names.push_back(t.head);
    node_names.push_back(t.tail);
    relation_names.push_back(t.relation);
  }
  nodes_ = Vocabulary(std::move(node_names));
  relations_ = Vocabulary(std::move(relation_names));
  out_index_.assign(nodes_.size(), {});
  in_index_.assign(nodes_.size(), {});
  item_nodes_.assign(nodes_.size(), false);
  for (const auto& t : unique) {
    const auto h = nodes_.at(t.head);
    const auto r = relations_.at(t.relation);
    const auto tl = nodes_.at(t.tail);
    out_index_[h].push_back({r, tl, Direction::forward});
    in_index_[tl].push_back({r, h, Direction::backward});
  }
  const auto by_relation_then_neighbor = [](const KgEdge& a, const KgEdge& b) {
    if (a.relation != b.relation) return a.relation < b.relation;
    return a.neighbor < b.neighbor;
  };
  for (auto& list : out_index_) std::sort(list.begin(), list.end(), by_relation_then_neighbor);
  for (auto& list : in_index_) std::sort(list.begin(), list.end(), by_relation_then_neighbor);
  triple_count_ = unique.size();
}

void KnowledgeGraph::mark_items(const std::vector<core::ItemId>& items) {
  for (const auto& item : items) {
    if (const auto id = nodes_.find(item)) item_nodes_[*id] = true;
  }
}

std::vector<Triple> KnowledgeGraph::triples() const {
  std::vector<Triple> out;
  out.reserve(triple_count_);
  for (NodeIndex h = 0; h < out_index_.size(); ++h) {
    for (const auto& e : out_index_[h]) {
      out.push_back({nodes_.name(h), relations_.name(e.relation), nodes_.name(e.neighbor)});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool KnowledgeGraph::operator==(const KnowledgeGraph& other) const {
  return nodes_ == other.nodes_ && relations_ == other.relations_ && out_index_ == other.out_index_ &&
         in_index_ == other.in_index_ && item_nodes_ == other.item_nodes_;
}

std::vector<Triple> parse_triples(std::istream& in, const std::string& source) {
  std::vector<Triple> triples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_tabs(detail::strip_cr(line));
    if (fields.size() != 3) throw ParseError(source, line_no, 0, "expected head, relation, tail");
    for (std::size_t f = 0; f < 3; ++f) {
      if (fields[f].empty()) throw ParseError(source, line_no, f + 1, "dangling entry: empty id");
    }
    triples.push_back({std::string(fields[0]), std::string(fields[1]), std::string(fields[2])});
  }
  return triples;
}

KnowledgeGraph load_triples(std::istream& in, const std::string& source) {
  return KnowledgeGraph(parse_triples(in, source));
}

KnowledgeGraph load_triples(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return load_triples(in, path.string());
}

void save_triples(std::ostream& out, const KnowledgeGraph& graph) {
  for (const auto& t : graph.triples()) out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
}

void save_triples(const std::filesystem::path& path, const KnowledgeGraph& graph) {
  auto out = detail::open_output(path);
  save_triples(out, graph);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace mtbrn::graphs
