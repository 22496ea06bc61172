#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtbrn/core.hpp"
#include "mtbrn/pathfinder.hpp"

namespace mtbrn::eval {

// Probability that a random positive outscores a random negative, ties
// counting one half. nullopt when either class is empty.
std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Mean binary cross-entropy with logs clamped at 1e-12.
double logloss(const std::vector<double>& scores, const std::vector<int>& labels);

struct EvalReport {
  std::optional<double> auc;
  double logloss = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

EvalReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels);

// Spearman rank correlation (average ranks for ties). nullopt with fewer than
// two points or when either side is constant.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

struct Bucket {
  std::size_t instances = 0;
  std::size_t clicks = 0;
  double click_rate() const { return instances == 0 ? 0.0 : static_cast<double>(clicks) / instances; }

  bool operator==(const Bucket&) const = default;
};

struct GraphPathStats {
  std::map<std::size_t, Bucket> by_count;
  // Mean token count per instance, rounded; instances without paths land in 0.
  std::map<std::size_t, Bucket> by_length;
  std::optional<double> count_spearman;
  std::optional<double> length_spearman;
};

struct PathStatsReport {
  std::size_t instances = 0;
  GraphPathStats cf;
  GraphPathStats kg;
};

// Path counts and mean token lengths of one instance.
struct PathSummary {
  std::size_t cf_count = 0;
  std::size_t kg_count = 0;
  double cf_mean_length = 0.0;
  double kg_mean_length = 0.0;
};

PathSummary summarize(const paths::NamedPathSet& set);

// Buckets instances by path count and by mean path length, per graph, and
// correlates each bucket key with the bucket click rate.
PathStatsReport path_validity_analysis(const std::vector<int>& labels, const std::vector<PathSummary>& summaries);
PathStatsReport path_validity_analysis(const std::vector<core::Instance>& instances,
                                       const std::vector<paths::NamedPathSet>& path_sets);

// CSV: graph,bucketing,key,instances,clicks,click_rate
void write_path_stats_csv(std::ostream& out, const PathStatsReport& report);
std::string path_stats_to_json(const PathStatsReport& report);
// gnuplot script plotting click rate against path count for both graphs,
// reading the CSV named `csv_name`.
std::string path_stats_gnuplot(const std::string& csv_name);

}  // namespace mtbrn::eval
