#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mtbrn/eval.hpp"
#include "mtbrn/graphs.hpp"
#include "mtbrn/model.hpp"
#include "mtbrn/pathfinder.hpp"

// Brute-force reference implementations. None of them share code with the
// library beyond its data types.
namespace mtbrn::oracle {

// Every simple path from a behavior to the target within max_hops, sorted by
// the documented total order, truncated to k.
std::vector<paths::Path> cf_paths(const std::vector<graphs::NodeIndex>& behaviors, graphs::NodeIndex target,
                                  const graphs::SimGraph& graph, std::size_t max_hops, std::size_t k);
std::vector<paths::Path> kg_paths(const std::vector<graphs::NodeIndex>& behaviors, graphs::NodeIndex target,
                                  const graphs::KnowledgeGraph& graph, std::size_t max_hops, std::size_t k);

// Dense users x items 0/1 matrix; columns named by `items`.
struct DenseMatrix {
  std::vector<std::string> items;
  std::vector<std::vector<int>> y;  // [user][item]
};

double dense_cosine(const DenseMatrix& m, std::size_t i, std::size_t j);
// Adjacency indexed like `m.items` after sorting names.
std::vector<std::vector<graphs::SimEdge>> dense_sim_graph(const DenseMatrix& m, std::size_t top_k);

std::optional<double> pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels);
double scalar_logloss(const std::vector<double>& scores, const std::vector<int>& labels);
// Sorts each side, assigns average ranks, then Pearson on the ranks.
std::optional<double> rank_sort_spearman(const std::vector<double>& x, const std::vector<double>& y);

using Vec = std::vector<double>;

// One peephole LSTM run from zero state, element by element.
Vec lstm_final_hidden(const model::LstmCell& cell, const std::vector<Vec>& xs);
// Straight-line forward pass of one instance.
double forward(const model::ModelParams& params, const model::EncodedInstance& instance);

// ---------------------------------------------------------------------------
// Random inputs

graphs::SimGraph random_sim_graph(std::mt19937_64& rng, std::size_t max_nodes, std::size_t max_degree);
graphs::KnowledgeGraph random_knowledge_graph(std::mt19937_64& rng, std::size_t max_nodes, std::size_t relations);
DenseMatrix random_dense_matrix(std::mt19937_64& rng, std::size_t max_users, std::size_t max_items);
graphs::InteractionMatrix to_interaction_matrix(const DenseMatrix& m);

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

}  // namespace mtbrn::oracle
