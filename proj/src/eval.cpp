#include "mtbrn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "mtbrn/error.hpp"
#include "text_io.hpp"

namespace mtbrn::eval {

namespace {

constexpr double kClamp = 1e-12;

void check_lengths(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw Error("score and label counts differ: " + std::to_string(scores.size()) + " vs " +
                std::to_string(labels.size()));
  }
  for (const int y : labels) {
    if (y != 0 && y != 1) throw Error("labels must be 0 or 1");
  }
}

// 1-based average ranks.
std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_lengths(scores, labels);
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const auto ranks = average_ranks(scores);
  // Mann-Whitney U from the positive rank sum; ranks are multiples of 1/2 so
  // the sum is exact.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) rank_sum += ranks[i];
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double logloss(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_lengths(scores, labels);
  if (scores.empty()) throw Error("logloss of an empty set");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = scores[i];
    total += labels[i] == 1 ? std::log(std::max(p, kClamp)) : std::log(std::max(1.0 - p, kClamp));
  }
  return -total / static_cast<double>(scores.size());
}

EvalReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels) {
  EvalReport r;
  r.auc = auc(scores, labels);
  r.logloss = logloss(scores, labels);
  r.n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.n_neg = labels.size() - r.n_pos;
  return r;
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 2) return std::nullopt;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

PathSummary summarize(const paths::NamedPathSet& set) {
  auto mean_len = [](const std::vector<paths::NamedPath>& ps) {
    if (ps.empty()) return 0.0;
    double total = 0.0;
    for (const auto& p : ps) total += static_cast<double>(p.size());
    return total / static_cast<double>(ps.size());
  };
  return {set.cf.size(), set.kg.size(), mean_len(set.cf), mean_len(set.kg)};
}

namespace {

std::optional<double> bucket_correlation(const std::map<std::size_t, Bucket>& buckets) {
  std::vector<double> keys;
  std::vector<double> rates;
  for (const auto& [k, b] : buckets) {
    keys.push_back(static_cast<double>(k));
    rates.push_back(b.click_rate());
  }
  return spearman(keys, rates);
}

void finish(GraphPathStats& g) {
  g.count_spearman = bucket_correlation(g.by_count);
  g.length_spearman = bucket_correlation(g.by_length);
}

}  // namespace

PathStatsReport path_validity_analysis(const std::vector<int>& labels, const std::vector<PathSummary>& summaries) {
  if (labels.empty()) throw Error("path validity analysis of an empty dataset");
  if (labels.size() != summaries.size()) {
    throw Error("path sets (" + std::to_string(summaries.size()) + ") do not align with instances (" +
                std::to_string(labels.size()) + ")");
  }
  PathStatsReport report;
  report.instances = labels.size();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& s = summaries[i];
    const std::size_t click = labels[i] == 1 ? 1 : 0;
    auto add = [&](std::map<std::size_t, Bucket>& m, std::size_t key) {
      auto& b = m[key];
      ++b.instances;
      b.clicks += click;
    };
    add(report.cf.by_count, s.cf_count);
    add(report.kg.by_count, s.kg_count);
    add(report.cf.by_length, static_cast<std::size_t>(std::lround(s.cf_mean_length)));
    add(report.kg.by_length, static_cast<std::size_t>(std::lround(s.kg_mean_length)));
  }
  finish(report.cf);
  finish(report.kg);
  return report;
}

PathStatsReport path_validity_analysis(const std::vector<core::Instance>& instances,
                                       const std::vector<paths::NamedPathSet>& path_sets) {
  std::vector<int> labels;
  std::vector<PathSummary> summaries;
  for (const auto& inst : instances) labels.push_back(inst.label);
  for (const auto& s : path_sets) summaries.push_back(summarize(s));
  return path_validity_analysis(labels, summaries);
}

void write_path_stats_csv(std::ostream& out, const PathStatsReport& report) {
  out << "graph,bucketing,key,instances,clicks,click_rate\n";
  auto rows = [&](const char* graph, const char* bucketing, const std::map<std::size_t, Bucket>& m) {
    for (const auto& [k, b] : m) {
      out << graph << ',' << bucketing << ',' << k << ',' << b.instances << ',' << b.clicks << ','
          << detail::format_fixed(b.click_rate(), 6) << '\n';
    }
  };
  rows("cf", "count", report.cf.by_count);
  rows("cf", "length", report.cf.by_length);
  rows("kg", "count", report.kg.by_count);
  rows("kg", "length", report.kg.by_length);
}

namespace {

nlohmann::json graph_json(const GraphPathStats& g) {
  auto buckets = [](const std::map<std::size_t, Bucket>& m) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [k, b] : m) {
      arr.push_back({{"key", k}, {"instances", b.instances}, {"clicks", b.clicks}, {"click_rate", b.click_rate()}});
    }
    return arr;
  };
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"by_count", buckets(g.by_count)},
          {"by_length", buckets(g.by_length)},
          {"count_spearman", opt(g.count_spearman)},
          {"length_spearman", opt(g.length_spearman)}};
}

}  // namespace

std::string path_stats_to_json(const PathStatsReport& report) {
  const nlohmann::json j{{"instances", report.instances}, {"cf", graph_json(report.cf)}, {"kg", graph_json(report.kg)}};
  return j.dump(2);
}

std::string path_stats_gnuplot(const std::string& csv_name) {
  return "set datafile separator ','\n"
         "set xlabel 'paths per instance'\n"
         "set ylabel 'click rate'\n"
         "set key top left\n"
         "plot '" + csv_name + "' using (strcol(1) eq 'cf' && strcol(2) eq 'count' ? $3 : 1/0):6 with linespoints title 'cf', \\\n"
         "     '" + csv_name + "' using (strcol(1) eq 'kg' && strcol(2) eq 'count' ? $3 : 1/0):6 with linespoints title 'kg'\n";
}

}  // namespace mtbrn::eval
