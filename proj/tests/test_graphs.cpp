#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "mtbrn/error.hpp"
#include "mtbrn/graphs.hpp"
#include "support/oracles.hpp"

using namespace mtbrn;
using graphs::InteractionMatrix;
using graphs::KgEdge;
using graphs::SimEdge;

namespace {

InteractionMatrix matrix(const std::vector<std::pair<std::string, std::string>>& pairs,
                         const std::vector<std::string>& catalog = {}) {
  return InteractionMatrix::from_pairs(pairs, catalog);
}

graphs::KnowledgeGraph kg_from(const std::string& text) {
  std::istringstream in(text);
  return graphs::load_triples(in, "kg.tsv");
}

}  // namespace

TEST(InteractionMatrix, ColumnsAreStrictlyIncreasing) {
  const auto m = matrix({{"u2", "a"}, {"u1", "a"}, {"u2", "a"}, {"u3", "b"}}, {"c"});
  EXPECT_EQ(m.item_count(), 3u);
  EXPECT_EQ(m.column(m.items().at("a")), (std::vector<graphs::NodeIndex>{0, 1}));
  EXPECT_TRUE(m.column(m.items().at("c")).empty());
}

TEST(InteractionMatrix, FromClicksUsesPositiveInstancesOnly) {
  core::Dataset ds{core::DatasetRole::graph_source,
                   {{"u1", "a", 1, {}, 1, {}, {}}, {"u1", "b", 2, {}, 0, {}, {}}, {"u2", "b", 3, {}, 1, {}, {}}}};
  const auto m = InteractionMatrix::from_clicks(ds);
  EXPECT_EQ(m.column(m.items().at("b")).size(), 1u);
}

// ---------------------------------------------------------------------------
// cosine_similarity

TEST(Cosine, IdenticalColumnsScoreOne) {
  const auto m = matrix({{"u1", "a"}, {"u2", "a"}, {"u1", "b"}, {"u2", "b"}});
  EXPECT_DOUBLE_EQ(graphs::cosine_similarity(m, "a", "b"), 1.0);
}

TEST(Cosine, DisjointUsersScoreZero) {
  const auto m = matrix({{"u1", "a"}, {"u2", "b"}});
  EXPECT_EQ(graphs::cosine_similarity(m, "a", "b"), 0.0);
}

TEST(Cosine, MatchesDenseOracleOnWorkedExample) {
  // Y[:,i] = [1,1,0], Y[:,j] = [1,0,0]
  oracle::DenseMatrix d{{"i", "j"}, {{1, 1}, {1, 0}, {0, 0}}};
  const double expect = oracle::dense_cosine(d, 0, 1);
  EXPECT_NEAR(expect, 1.0 / std::sqrt(2.0), 1e-15);
  const auto m = oracle::to_interaction_matrix(d);
  EXPECT_NEAR(graphs::cosine_similarity(m, "i", "j"), expect, 1e-12);
}

TEST(Cosine, EmptyColumnScoresZero) {
  const auto m = matrix({{"u1", "a"}}, {"b"});
  EXPECT_EQ(graphs::cosine_similarity(m, "a", "b"), 0.0);
}

TEST(Cosine, RejectsUnknownOrIdenticalItems) {
  const auto m = matrix({{"u1", "a"}, {"u1", "b"}});
  EXPECT_THROW(graphs::cosine_similarity(m, "a", "zz"), Error);
  EXPECT_THROW(graphs::cosine_similarity(m, "a", "a"), Error);
}

TEST(CosineProperty, SymmetricAndBounded) {
  std::mt19937_64 rng(11);
  for (int c = 0; c < 100; ++c) {
    const auto d = oracle::random_dense_matrix(rng, 12, 10);
    const auto m = oracle::to_interaction_matrix(d);
    for (graphs::NodeIndex i = 0; i < m.item_count(); ++i) {
      for (graphs::NodeIndex j = 0; j < m.item_count(); ++j) {
        if (i == j) continue;
        const double a = graphs::cosine_similarity(m, i, j);
        ASSERT_EQ(a, graphs::cosine_similarity(m, j, i));
        ASSERT_GE(a, 0.0);
        ASSERT_LE(a, 1.0);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// build_sim_graph

TEST(SimGraph, PartialOverlapGivesMutualEdges) {
  // 3 users x 2 items: u0 clicks both, u1 only a, u2 only b.
  oracle::DenseMatrix d{{"a", "b"}, {{1, 1}, {1, 0}, {0, 1}}};
  const auto g = graphs::build_sim_graph(oracle::to_interaction_matrix(d), 5);
  const auto expect = oracle::dense_sim_graph(d, 5);
  ASSERT_EQ(g.neighbors(0).size(), 1u);
  ASSERT_EQ(g.neighbors(1).size(), 1u);
  EXPECT_EQ(g.neighbors(0)[0].neighbor, 1u);
  EXPECT_EQ(g.neighbors(1)[0].neighbor, 0u);
  EXPECT_NEAR(g.neighbors(0)[0].score, expect[0][0].score, 1e-12);
  EXPECT_NEAR(g.neighbors(0)[0].score, 0.5, 1e-12);
}

TEST(SimGraph, ItemWithoutInteractionsHasNoNeighbors) {
  const auto g = graphs::build_sim_graph(matrix({{"u1", "a"}, {"u1", "b"}}, {"c"}), 5);
  EXPECT_TRUE(g.neighbors(g.items().at("c")).empty());
  EXPECT_TRUE(g.predecessors(g.items().at("c")).empty());
}

TEST(SimGraph, TopFiveOfTwentyCandidates) {
  std::vector<std::pair<std::string, std::string>> pairs;
  // Item "hub" shares user k with item n_k; n_k has k+1 users so scores differ.
  for (int k = 0; k < 20; ++k) {
    const std::string item = "n" + std::to_string(k);
    pairs.push_back({"shared" + std::to_string(k), "hub"});
    pairs.push_back({"shared" + std::to_string(k), item});
    for (int extra = 0; extra < k; ++extra) pairs.push_back({"x" + std::to_string(k) + "_" + std::to_string(extra), item});
  }
  const auto g = graphs::build_sim_graph(matrix(pairs), 5);
  const auto& hub = g.neighbors(g.items().at("hub"));
  ASSERT_EQ(hub.size(), 5u);
  for (std::size_t i = 1; i < hub.size(); ++i) EXPECT_GE(hub[i - 1].score, hub[i].score);
  EXPECT_EQ(g.items().name(hub[0].neighbor), "n0");
}

TEST(SimGraph, TiesBreakByNeighborId) {
  const auto g = graphs::build_sim_graph(matrix({{"u", "a"}, {"u", "c"}, {"u", "b"}}), 5);
  const auto& a = g.neighbors(g.items().at("a"));
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(g.items().name(a[0].neighbor), "b");
  EXPECT_EQ(g.items().name(a[1].neighbor), "c");
}

TEST(SimGraph, MathematicallyEqualScoresTieExactly) {
  // Neighbor x: co=1, n=2. Neighbor y: co=3, n=18. Both equal 1/sqrt(2 n_a),
  // so the smaller id wins even though the two quotients round differently.
  std::vector<std::pair<std::string, std::string>> pairs;
  for (int u = 0; u < 3; ++u) pairs.push_back({"v" + std::to_string(u), "y"});
  for (int u = 0; u < 15; ++u) pairs.push_back({"z" + std::to_string(u), "y"});
  for (int u = 0; u < 3; ++u) pairs.push_back({"v" + std::to_string(u), "a"});
  pairs.push_back({"w0", "x"});
  pairs.push_back({"v3", "x"});
  pairs.push_back({"v3", "a"});  // a's users: v0..v3; x shares v3; y shares v0..v2
  const auto g = graphs::build_sim_graph(matrix(pairs), 5);
  const auto& a = g.neighbors(g.items().at("a"));
  ASSERT_EQ(a.size(), 2u);
  // x: 1/sqrt(4*2) ; y: 3/sqrt(4*18) -- both 1/sqrt(8).
  EXPECT_EQ(g.items().name(a[0].neighbor), "x");
  EXPECT_EQ(g.items().name(a[1].neighbor), "y");
}

TEST(SimGraphProperty, MatchesDenseOracle) {
  std::mt19937_64 rng(12);
  for (int c = 0; c < 100; ++c) {
    const auto d = oracle::random_dense_matrix(rng, 50, 30);
    const std::size_t k = 1 + rng() % 6;
    const auto g = graphs::build_sim_graph(oracle::to_interaction_matrix(d), k);
    const auto expect = oracle::dense_sim_graph(d, k);
    ASSERT_EQ(g.size(), expect.size());
    for (graphs::NodeIndex i = 0; i < g.size(); ++i) {
      const auto& got = g.neighbors(i);
      ASSERT_EQ(got.size(), expect[i].size()) << "case " << c << " item " << i;
      for (std::size_t e = 0; e < got.size(); ++e) {
        ASSERT_EQ(got[e].neighbor, expect[i][e].neighbor);
        ASSERT_NEAR(got[e].score, expect[i][e].score, 1e-12);
        ASSERT_NE(got[e].neighbor, i);
      }
    }
  }
}

TEST(SimGraph, SaveLoadKeepsStructureAndSixDecimals) {
  oracle::DenseMatrix d{{"a", "b", "c"}, {{1, 1, 0}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}}};
  const auto g = graphs::build_sim_graph(oracle::to_interaction_matrix(d), 5);
  std::ostringstream out;
  graphs::save_sim_graph(out, g);
  EXPECT_NE(out.str().find("a\tb\t0.666667"), std::string::npos) << out.str();
  std::istringstream in(out.str());
  const auto back = graphs::load_sim_graph(in);
  ASSERT_EQ(back.size(), g.size());
  for (graphs::NodeIndex i = 0; i < g.size(); ++i) {
    ASSERT_EQ(back.neighbors(i).size(), g.neighbors(i).size());
    for (std::size_t e = 0; e < g.neighbors(i).size(); ++e) {
      EXPECT_NEAR(back.neighbors(i)[e].score, g.neighbors(i)[e].score, 5e-7);
    }
  }
}

TEST(SimGraph, LoadRejectsBadRows) {
  for (const char* text : {"a\tb\n", "a\ta\t0.5\n", "a\tb\t1.5\n", "a\tb\tx\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(graphs::load_sim_graph(in), ParseError) << text;
  }
}

// ---------------------------------------------------------------------------
// KnowledgeGraph

TEST(KnowledgeGraph, SingleTripleIndexesBothDirections) {
  const auto kg = kg_from("i\tcategory\tlonguette\n");
  const auto i = kg.nodes().at("i");
  const auto l = kg.nodes().at("longuette");
  const auto r = kg.relations().at("category");
  EXPECT_EQ(kg.out_edges(i), (std::vector<KgEdge>{{r, l, graphs::Direction::forward}}));
  EXPECT_EQ(kg.in_edges(l), (std::vector<KgEdge>{{r, i, graphs::Direction::backward}}));
  EXPECT_TRUE(kg.in_edges(i).empty());
  EXPECT_TRUE(kg.out_edges(l).empty());
}

TEST(KnowledgeGraph, EmptyFileGivesEmptyGraph) {
  const auto kg = kg_from("");
  EXPECT_EQ(kg.nodes().size(), 0u);
  EXPECT_EQ(kg.triple_count(), 0u);
}

TEST(KnowledgeGraph, DuplicateTripleStoredOnce) {
  const auto kg = kg_from("a\tr\tb\na\tr\tb\n");
  EXPECT_EQ(kg.triple_count(), 1u);
  EXPECT_EQ(kg.out_edges(kg.nodes().at("a")).size(), 1u);
}

TEST(KnowledgeGraph, MalformedRowsReportLine) {
  try {
    kg_from("a\tr\tb\na\t\tb\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(kg_from("a\tr\n"), ParseError);
}

TEST(KnowledgeGraph, MarkItemsFlagsKnownNodes) {
  auto kg = kg_from("i1\tr\te1\n");
  kg.mark_items({"i1", "unknown"});
  EXPECT_TRUE(kg.is_item(kg.nodes().at("i1")));
  EXPECT_FALSE(kg.is_item(kg.nodes().at("e1")));
}

TEST(KnowledgeGraphProperty, IndexesAreTransposesAndRoundTrip) {
  std::mt19937_64 rng(13);
  for (int c = 0; c < 100; ++c) {
    const auto kg = oracle::random_knowledge_graph(rng, 20, 4);
    for (graphs::NodeIndex n = 0; n < kg.nodes().size(); ++n) {
      for (const auto& e : kg.out_edges(n)) {
        const auto& back = kg.in_edges(e.neighbor);
        ASSERT_NE(std::find(back.begin(), back.end(), KgEdge{e.relation, n, graphs::Direction::backward}),
                  back.end());
      }
    }
    std::ostringstream out;
    graphs::save_triples(out, kg);
    std::istringstream in(out.str());
    const auto back = graphs::load_triples(in);
    ASSERT_EQ(back.triples(), kg.triples());
    ASSERT_EQ(back.nodes(), kg.nodes());
    for (graphs::NodeIndex n = 0; n < kg.nodes().size(); ++n) {
      ASSERT_EQ(back.out_edges(n), kg.out_edges(n));
      ASSERT_EQ(back.in_edges(n), kg.in_edges(n));
    }
  }
}
