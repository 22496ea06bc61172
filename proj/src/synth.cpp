#include "mtbrn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "mtbrn/error.hpp"
#include "mtbrn/eval.hpp"
#include "mtbrn/hashing.hpp"
#include "text_io.hpp"

namespace mtbrn::synth {

void validate(const SyntheticWorldConfig& c) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw Error(std::string("synthetic world: ") + name + " must be at least 1");
  };
  positive(c.n_users, "n_users");
  positive(c.n_items, "n_items");
  positive(c.n_entities, "n_entities");
  positive(c.n_relations, "n_relations");
  positive(c.theme_count, "theme_count");
  positive(c.cluster_count, "cluster_count");
  positive(c.impressions_per_user, "impressions_per_user");
  positive(c.preferred_themes, "preferred_themes");
  positive(c.preferred_clusters, "preferred_clusters");
  if (c.theme_count > c.n_entities) throw Error("synthetic world: theme_count exceeds n_entities");
  if (c.preferred_themes > c.theme_count) throw Error("synthetic world: preferred_themes exceeds theme_count");
  if (c.preferred_clusters > c.cluster_count) throw Error("synthetic world: preferred_clusters exceeds cluster_count");
  for (const double w : {c.bias, c.w_kg, c.w_cf, c.w_noise}) {
    if (!std::isfinite(w)) throw Error("synthetic world: weights must be finite");
  }
}

GroundTruth::GroundTruth(std::vector<ItemTruth> items, std::vector<ImpressionTruth> impressions)
    : items_(std::move(items)), impressions_(std::move(impressions)) {
  for (const auto& imp : impressions_) index_[{imp.user, imp.item, imp.timestamp}] = imp.probability;
}

double GroundTruth::probability(const core::UserId& user, const core::ItemId& item, std::int64_t timestamp) const {
  const auto it = index_.find({user, item, timestamp});
  if (it == index_.end()) {
    throw Error("ground truth has no impression (" + user + ", " + item + ", " + std::to_string(timestamp) + ")");
  }
  return it->second;
}

namespace {

std::string make_name(char prefix, std::size_t i, std::size_t n) {
  const std::size_t width = std::to_string(n == 0 ? 0 : n - 1).size();
  std::string digits = std::to_string(i);
  return std::string(1, prefix) + std::string(width - std::min(width, digits.size()), '0') + digits;
}

std::vector<std::size_t> balanced_labels(std::size_t n, std::size_t groups, std::mt19937_64& rng) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % groups;
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

std::vector<std::size_t> choose(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

double saturating(std::size_t n) { return 1.0 - std::pow(0.5, static_cast<double>(n)); }

double sigmoid(double z) {
  // Keeps probabilities strictly inside (0, 1).
  z = std::clamp(z, -30.0, 30.0);
  return 1.0 / (1.0 + std::exp(-z));
}

}  // namespace

World generate_world(const SyntheticWorldConfig& config) {
  validate(config);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform_index = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  std::vector<std::string> items;
  for (std::size_t i = 0; i < config.n_items; ++i) items.push_back(make_name('i', i, config.n_items));
  std::vector<std::string> entities;
  for (std::size_t i = 0; i < config.n_entities; ++i) entities.push_back(make_name('e', i, config.n_entities));
  std::vector<std::string> relations;
  for (std::size_t i = 0; i < config.n_relations; ++i) relations.push_back(make_name('r', i, config.n_relations));

  const auto theme = balanced_labels(config.n_items, config.theme_count, rng);
  const auto cluster = balanced_labels(config.n_items, config.cluster_count, rng);

  World world;
  // Knowledge graph.
  std::set<graphs::Triple> triples;
  const std::size_t attributes = config.n_entities - config.theme_count;
  auto attribute_relation = [&]() {
    return config.n_relations == 1 ? relations[0] : relations[1 + uniform_index(config.n_relations - 1)];
  };
  for (std::size_t i = 0; i < config.n_items; ++i) {
    triples.insert({items[i], relations[0], entities[theme[i]]});
    if (attributes == 0) continue;
    const std::size_t count = 1 + (unit(rng) < 0.5 ? 1 : 0);
    for (std::size_t a = 0; a < count; ++a) {
      const std::size_t attr = config.theme_count + uniform_index(attributes);
      triples.insert({items[i], attribute_relation(), entities[attr]});
    }
  }
  for (std::size_t a = config.theme_count; a < config.n_entities; ++a) {
    if (unit(rng) < 0.3) {
      triples.insert({entities[a], relations.back(), entities[uniform_index(config.theme_count)]});
    }
  }
  world.triples.assign(triples.begin(), triples.end());

  // Profiles carry no click signal.
  for (std::size_t u = 0; u < config.n_users; ++u) {
    const std::string id = make_name('u', u, config.n_users);
    world.profiles.push_back({"user", id, {"segment", core::FeatureKind::sparse, uniform_index(5), 0.0}});
    world.profiles.push_back({"user", id, {"activity", core::FeatureKind::numerical, 0, std::round(unit(rng) * 1e6) / 1e6}});
  }
  for (std::size_t i = 0; i < config.n_items; ++i) {
    world.profiles.push_back({"item", items[i], {"brand", core::FeatureKind::sparse, uniform_index(20), 0.0}});
    world.profiles.push_back({"item", items[i], {"price", core::FeatureKind::numerical, 0, std::round(unit(rng) * 1e6) / 1e6}});
  }

  std::vector<std::vector<std::size_t>> by_theme(config.theme_count);
  std::vector<std::vector<std::size_t>> by_cluster(config.cluster_count);
  for (std::size_t i = 0; i < config.n_items; ++i) {
    by_theme[theme[i]].push_back(i);
    by_cluster[cluster[i]].push_back(i);
  }

  std::vector<ItemTruth> item_truth;
  for (std::size_t i = 0; i < config.n_items; ++i) item_truth.push_back({items[i], theme[i], cluster[i]});

  std::vector<ImpressionTruth> impressions;
  for (std::size_t u = 0; u < config.n_users; ++u) {
    const std::string user = make_name('u', u, config.n_users);
    const auto themes = choose(config.theme_count, config.preferred_themes, rng);
    const auto clusters = choose(config.cluster_count, config.preferred_clusters, rng);
    std::vector<std::size_t> clicks;
    std::set<std::size_t> shown;
    for (std::size_t s = 0; s < config.impressions_per_user; ++s) {
      std::size_t target = 0;
      for (int attempt = 0; attempt < 20; ++attempt) {
        const double r = unit(rng);
        if (r < 0.35) {
          const auto& pool = by_theme[themes[uniform_index(themes.size())]];
          target = pool[uniform_index(pool.size())];
        } else if (r < 0.70) {
          const auto& pool = by_cluster[clusters[uniform_index(clusters.size())]];
          target = pool[uniform_index(pool.size())];
        } else {
          target = uniform_index(config.n_items);
        }
        if (!shown.contains(target)) break;
      }
      shown.insert(target);

      // Same window the instance builder sees: newest clicks first, skipping
      // the target, at most the default behavior count.
      std::size_t same_theme = 0;
      std::size_t same_cluster = 0;
      std::size_t taken = 0;
      for (auto it = clicks.rbegin(); it != clicks.rend() && taken < core::kDefaultMaxBehaviors; ++it) {
        if (*it == target) continue;
        ++taken;
        if (theme[*it] == theme[target]) ++same_theme;
        if (cluster[*it] == cluster[target]) ++same_cluster;
      }
      const double z = config.bias + config.w_kg * saturating(same_theme) + config.w_cf * saturating(same_cluster) +
                       config.w_noise * gauss(rng);
      const double p = sigmoid(z);
      const int label = unit(rng) < p ? 1 : 0;
      const std::int64_t ts = 1'000'000 + static_cast<std::int64_t>(s) * 1000 + static_cast<std::int64_t>(u);
      world.interactions.push_back({user, items[target], ts, label});
      impressions.push_back({user, items[target], ts, p});
      if (label == 1) clicks.push_back(target);
    }
  }
  world.truth = GroundTruth(std::move(item_truth), std::move(impressions));
  return world;
}

WorldFiles world_files(const std::filesystem::path& dir) {
  return {dir / "interactions.tsv", dir / "triples.tsv",     dir / "profiles.tsv",
          dir / "ground_truth.tsv", dir / "item_truth.tsv", dir / "world_manifest.json"};
}

namespace {

nlohmann::json config_json(const SyntheticWorldConfig& c) {
  return {{"n_users", c.n_users},
          {"n_items", c.n_items},
          {"n_entities", c.n_entities},
          {"n_relations", c.n_relations},
          {"theme_count", c.theme_count},
          {"cluster_count", c.cluster_count},
          {"impressions_per_user", c.impressions_per_user},
          {"preferred_themes", c.preferred_themes},
          {"preferred_clusters", c.preferred_clusters},
          {"bias", c.bias},
          {"w_kg", c.w_kg},
          {"w_cf", c.w_cf},
          {"w_noise", c.w_noise},
          {"report_test_tail", c.report_test_tail},
          {"seed", c.seed}};
}

void write_or_throw(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

double write_world(const World& world, const SyntheticWorldConfig& config, const std::filesystem::path& dir) {
  const auto files = world_files(dir);
  {
    auto out = detail::open_output(files.interactions);
    core::write_interactions(out, world.interactions);
    write_or_throw(out, files.interactions);
  }
  {
    auto out = detail::open_output(files.triples);
    for (const auto& t : world.triples) out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
    write_or_throw(out, files.triples);
  }
  {
    auto out = detail::open_output(files.profiles);
    for (const auto& row : world.profiles) {
      out << row.entity_kind << '\t' << row.entity_id << '\t' << row.value.field << '\t'
          << core::to_string(row.value.kind) << '\t';
      if (row.value.kind == core::FeatureKind::sparse) {
        out << row.value.token;
      } else {
        out << detail::format_fixed(row.value.value, 6);
      }
      out << '\n';
    }
    write_or_throw(out, files.profiles);
  }
  {
    auto out = detail::open_output(files.ground_truth);
    for (const auto& imp : world.truth.impressions()) {
      out << imp.user << '\t' << imp.item << '\t' << imp.timestamp << '\t' << detail::format_shortest(imp.probability)
          << '\n';
    }
    write_or_throw(out, files.ground_truth);
  }
  {
    auto out = detail::open_output(files.item_truth);
    for (const auto& it : world.truth.items()) out << it.item << '\t' << it.theme << '\t' << it.cluster << '\n';
    write_or_throw(out, files.item_truth);
  }

  const auto instances = core::build_instances(world.interactions);
  std::vector<core::Instance> report;
  std::size_t begin = 0;
  while (begin < instances.size()) {
    std::size_t end = begin;
    while (end < instances.size() && instances[end].user == instances[begin].user) ++end;
    if (end - begin >= config.report_test_tail) {
      report.insert(report.end(), instances.begin() + static_cast<std::ptrdiff_t>(end - config.report_test_tail),
                    instances.begin() + static_cast<std::ptrdiff_t>(end));
    }
    begin = end;
  }
  double bayes_tail = 0.5;
  try {
    bayes_tail = bayes_oracle_auc(world.truth, report);
  } catch (const Error&) {
    bayes_tail = std::nan("");
  }
  double bayes_all = std::nan("");
  try {
    bayes_all = bayes_oracle_auc(world.truth, instances);
  } catch (const Error&) {
  }
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };

  std::size_t clicks = 0;
  for (const auto& i : world.interactions) clicks += static_cast<std::size_t>(i.label);
  nlohmann::json manifest{
      {"config", config_json(config)},
      {"impressions", world.interactions.size()},
      {"clicks", clicks},
      {"triples", world.triples.size()},
      {"bayes_auc_all", num(bayes_all)},
      {"bayes_auc_test_tail", num(bayes_tail)},
      {"files",
       {{"interactions.tsv", sha256_file(files.interactions)},
        {"triples.tsv", sha256_file(files.triples)},
        {"profiles.tsv", sha256_file(files.profiles)},
        {"ground_truth.tsv", sha256_file(files.ground_truth)},
        {"item_truth.tsv", sha256_file(files.item_truth)}}}};
  auto out = detail::open_output(files.manifest);
  out << manifest.dump(2) << '\n';
  write_or_throw(out, files.manifest);
  return bayes_tail;
}

GroundTruth load_ground_truth(const std::filesystem::path& impressions_path, const std::filesystem::path& items_path) {
  std::vector<ImpressionTruth> impressions;
  {
    auto in = detail::open_input(impressions_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto text = detail::strip_cr(line);
      if (text.empty()) continue;
      const auto f = detail::split_tabs(text);
      if (f.size() != 4) throw ParseError(impressions_path.string(), line_no, 0, "expected 4 fields");
      const auto ts = detail::parse_integer<std::int64_t>(f[2]);
      if (!ts) throw ParseError(impressions_path.string(), line_no, 3, "timestamp must be an integer");
      const auto p = detail::parse_real(f[3]);
      if (!p || *p <= 0.0 || *p >= 1.0) {
        throw ParseError(impressions_path.string(), line_no, 4, "probability must lie in (0, 1)");
      }
      impressions.push_back({std::string(f[0]), std::string(f[1]), *ts, *p});
    }
  }
  std::vector<ItemTruth> items;
  {
    auto in = detail::open_input(items_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto text = detail::strip_cr(line);
      if (text.empty()) continue;
      const auto f = detail::split_tabs(text);
      if (f.size() != 3) throw ParseError(items_path.string(), line_no, 0, "expected 3 fields");
      const auto th = detail::parse_integer<std::size_t>(f[1]);
      const auto cl = detail::parse_integer<std::size_t>(f[2]);
      if (!th) throw ParseError(items_path.string(), line_no, 2, "theme must be an integer");
      if (!cl) throw ParseError(items_path.string(), line_no, 3, "cluster must be an integer");
      items.push_back({std::string(f[0]), *th, *cl});
    }
  }
  return GroundTruth(std::move(items), std::move(impressions));
}

double bayes_oracle_auc(const GroundTruth& truth, const std::vector<core::Instance>& instances) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& inst : instances) {
    scores.push_back(truth.probability(inst.user, inst.target, inst.timestamp));
    labels.push_back(inst.label);
  }
  const auto a = eval::auc(scores, labels);
  if (!a) throw Error("Bayes AUC undefined: instances contain a single class");
  return *a;
}

}  // namespace mtbrn::synth
