#include "mtbrn/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtbrn/core.hpp"
#include "mtbrn/error.hpp"
#include "mtbrn/eval.hpp"
#include "mtbrn/graphs.hpp"
#include "mtbrn/hashing.hpp"
#include "mtbrn/micro.hpp"
#include "mtbrn/model.hpp"
#include "mtbrn/pathfinder.hpp"
#include "mtbrn/synth.hpp"
#include "mtbrn/train.hpp"
#include "text_io.hpp"

namespace mtbrn::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kFilesGroup = "Files";
constexpr const char* kSettingsGroup = "Settings";

// Usage problems detected after CLI11 parsing (bad values, config clashes).
class UsageError : public Error {
 public:
  using Error::Error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

}  // namespace

ConfigFile parse_config(const std::string& text, const std::string& source) {
  ConfigFile cfg;
  cfg.source = source;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  std::map<std::string, ConfigEntry>* section = &cfg.global;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(source, line_no, 0, "unterminated section header");
      const std::string name = trim(line.substr(1, line.size() - 2));
      if (name.empty()) throw ParseError(source, line_no, 0, "empty section name");
      section = &cfg.sections[name];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, line_no, 0, "expected 'key = value'");
    const std::string key = normalize_key(trim(line.substr(0, eq)));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(source, line_no, 0, "empty key");
    if (!value.empty() && (value.front() == '"' || value.front() == '\'')) {
      const char q = value.front();
      const auto close = value.find(q, 1);
      if (close == std::string::npos) throw ParseError(source, line_no, 0, "unterminated string");
      value = value.substr(1, close - 1);
    } else {
      const auto hash = value.find('#');
      if (hash != std::string::npos) value = trim(value.substr(0, hash));
    }
    if (section->contains(key)) {
      throw ParseError(source, line_no, 0,
                       "key '" + key + "' already set on line " + std::to_string(section->at(key).line));
    }
    (*section)[key] = {value, line_no};
  }
  return cfg;
}

std::string comparable_manifest(const fs::path& path) {
  auto in = detail::open_input(path);
  json j = json::parse(in);
  j.erase("wall_time_seconds");
  j.erase("files");
  if (j.contains("config")) j["config"].erase("threads");
  return j.dump();
}

namespace {

// ---------------------------------------------------------------------------
// Manifest

class Manifest {
 public:
  Manifest(std::string command, const CLI::App& sub)
      : command_(std::move(command)), sub_(sub), start_(std::chrono::steady_clock::now()) {}

  void input(const std::string& key, const fs::path& path) { inputs_[key] = sha256_file(path); }
  void output(const fs::path& path) { outputs_[path.filename().string()] = sha256_file(path); }

  void write(const fs::path& path, std::uint64_t seed) const {
    json config = json::object();
    json files = json::object();
    for (const auto* opt : sub_.get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help" || name == "config" || name == "manifest") continue;
      std::string value = opt->count() > 0 ? opt->as<std::string>() : opt->get_default_str();
      (opt->get_group() == kFilesGroup ? files : config)[name] = value;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const json j{{"command", command_}, {"seed", seed},        {"config", config},
                 {"files", files},      {"inputs", inputs_},   {"outputs", outputs_},
                 {"wall_time_seconds", wall}};
    auto out = detail::open_output(path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
  }

 private:
  std::string command_;
  const CLI::App& sub_;
  std::chrono::steady_clock::time_point start_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

fs::path manifest_path(const std::string& flag, const fs::path& fallback) { return flag.empty() ? fallback : fs::path(flag); }

std::vector<std::size_t> parse_sizes(const std::string& text, const std::string& what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto v = detail::parse_integer<std::size_t>(trim(part));
    if (!v || *v == 0) throw UsageError(what + " must be a comma-separated list of positive integers, got '" + text + "'");
    out.push_back(*v);
  }
  if (out.empty()) throw UsageError(what + " must not be empty");
  return out;
}

std::string format_double(double v) { return detail::format_fixed(v, 6); }

void check_alignment(const std::vector<core::Instance>& instances, const std::vector<paths::NamedPathSet>& sets) {
  if (instances.size() != sets.size()) {
    throw Error("path/instance misalignment: " + std::to_string(sets.size()) + " path sets for " +
                std::to_string(instances.size()) + " instances");
  }
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].instance_idx != i) {
      throw Error("path/instance misalignment at index " + std::to_string(i) + ": record has instance_idx " +
                  std::to_string(sets[i].instance_idx));
    }
  }
}

std::vector<model::EncodedInstance> encode_all(const model::EmbeddingTable& table,
                                               const std::vector<core::Instance>& instances,
                                               const std::vector<paths::NamedPathSet>& sets) {
  std::vector<model::EncodedInstance> out;
  out.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) out.push_back(model::encode_instance(table, instances[i], sets[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Commands. Each registers its options and returns the action to run.

using Action = std::function<void(std::ostream&)>;

struct Command {
  CLI::App* app = nullptr;
  Action action;
};

void add_common(CLI::App* sub, std::string& config, std::string& manifest, std::uint64_t& seed) {
  sub->add_option("--config", config, "Key-value config file; flags override its entries")->group(kFilesGroup);
  sub->add_option("--manifest", manifest, "Run manifest path (default: next to the outputs)")->group(kFilesGroup);
  sub->add_option("--seed", seed, "Random seed")->group(kSettingsGroup);
}

struct Options {
  std::string config;
  std::string manifest;
  std::uint64_t seed = 42;

  // gen-synth
  synth::SyntheticWorldConfig world;
  // shared paths
  std::string out_dir;
  std::string out;
  std::string interactions;
  std::string profiles;
  std::string instances;
  std::string simgraph;
  std::string triples;
  std::string paths;
  std::string train_file;
  std::string checkpoint;
  std::string predictions;
  // build-simgraph
  std::size_t test_tail = 10;
  std::size_t train_window = 20;
  std::size_t max_behaviors = core::kDefaultMaxBehaviors;
  std::size_t top_k = graphs::kDefaultTopK;
  std::size_t negatives = 0;
  // extract-paths
  paths::ExtractConfig extract;
  std::size_t threads = 1;
  // train
  std::string variant = "full";
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 0.001;
  double epsilon = 1e-8;
  double init_range = 0.05;
  std::size_t embedding_dim = 4;
  std::size_t hidden = 8;
  std::string mlp = "32,16,8";
  // evaluate / analyze
  std::string format = "json";
  // grad-check
  double tol = 1e-4;
  double step = 1e-5;
};

Command gen_synth(CLI::App& app, Options& o) {
  auto* sub = app.add_subcommand("gen-synth", "Generate a synthetic world with planted relational structure");
  add_common(sub, o.config, o.manifest, o.seed);
  sub->add_option("--out-dir", o.out_dir, "Directory for the world files")->required()->group(kFilesGroup);
  auto& w = o.world;
  sub->add_option("--users", w.n_users, "Number of users")->group(kSettingsGroup);
  sub->add_option("--items", w.n_items, "Number of items")->group(kSettingsGroup);
  sub->add_option("--entities", w.n_entities, "Number of knowledge-graph entities")->group(kSettingsGroup);
  sub->add_option("--relations", w.n_relations, "Number of relations")->group(kSettingsGroup);
  sub->add_option("--themes", w.theme_count, "Latent themes (knowledge-graph signal)")->group(kSettingsGroup);
  sub->add_option("--clusters", w.cluster_count, "Latent co-click clusters (similarity signal)")->group(kSettingsGroup);
  sub->add_option("--impressions", w.impressions_per_user, "Impressions per user")->group(kSettingsGroup);
  sub->add_option("--bias", w.bias, "Click-model bias")->group(kSettingsGroup);
  sub->add_option("--w-kg", w.w_kg, "Click-model weight of theme connectivity")->group(kSettingsGroup);
  sub->add_option("--w-cf", w.w_cf, "Click-model weight of cluster connectivity")->group(kSettingsGroup);
  sub->add_option("--w-noise", w.w_noise, "Click-model noise scale")->group(kSettingsGroup);
  sub->add_option("--report-test-tail", w.report_test_tail, "Per-user tail used for the manifest Bayes AUC")
      ->group(kSettingsGroup);
  return {sub, [&o, sub](std::ostream& out) {
            o.world.seed = o.seed;
            Manifest manifest("gen-synth", *sub);
            const auto world = synth::generate_world(o.world);
            const double bayes = synth::write_world(world, o.world, o.out_dir);
            const auto files = synth::world_files(o.out_dir);
            for (const auto& p : {files.interactions, files.triples, files.profiles, files.ground_truth,
                                  files.item_truth, files.manifest}) {
              manifest.output(p);
            }
            manifest.write(manifest_path(o.manifest, fs::path(o.out_dir) / "gen-synth.manifest.json"), o.seed);
            out << "impressions: " << world.interactions.size() << "\ntriples: " << world.triples.size()
                << "\nbayes_auc_test_tail: " << format_double(bayes) << '\n';
          }};
}

Command build_simgraph(CLI::App& app, Options& o) {
  auto* sub = app.add_subcommand("build-simgraph",
                                 "Build instances, split them chronologically and build the similarity graph from "
                                 "the graph-source partition");
  add_common(sub, o.config, o.manifest, o.seed);
  sub->add_option("--interactions", o.interactions, "Interactions TSV")->required()->check(CLI::ExistingFile)
      ->group(kFilesGroup);
  sub->add_option("--profiles", o.profiles, "Profile features TSV")->check(CLI::ExistingFile)->group(kFilesGroup);
  sub->add_option("--out-dir", o.out_dir, "Output directory")->required()->group(kFilesGroup);
  sub->add_option("--test-tail", o.test_tail, "Instances per user kept for test")->group(kSettingsGroup);
  sub->add_option("--train-window", o.train_window, "Instances per user before the test tail kept for training")
      ->group(kSettingsGroup);
  sub->add_option("--max-behaviors", o.max_behaviors, "Behavior window length")->group(kSettingsGroup);
  sub->add_option("--top-k", o.top_k, "Neighbors kept per item")->group(kSettingsGroup);
  sub->add_option("--negatives", o.negatives, "Negatives sampled per positive (0 keeps logged labels)")
      ->group(kSettingsGroup);
  return {sub, [&o, sub](std::ostream& out) {
            Manifest manifest("build-simgraph", *sub);
            const auto log = core::parse_interactions(fs::path(o.interactions));
            manifest.input("interactions", o.interactions);
            auto instances = core::build_instances(log, o.max_behaviors);
            auto split = core::chronological_split(instances, o.test_tail, o.train_window);

            std::vector<core::ItemId> catalog;
            {
              std::set<core::ItemId> items;
              for (const auto& r : log) items.insert(r.item);
              catalog.assign(items.begin(), items.end());
            }
            const auto matrix = graphs::InteractionMatrix::from_clicks(split.graph_source, catalog);
            const auto sim = graphs::build_sim_graph(matrix, o.top_k);

            std::size_t short_pools = 0;
            if (o.negatives > 0) {
              const std::set<core::ItemId> pool(catalog.begin(), catalog.end());
              const auto interacted = core::interacted_items(log);
              std::uint64_t salt = 0;
              for (auto* ds : {&split.train, &split.test}) {
                std::vector<core::Instance> positives;
                for (auto& inst : ds->instances) {
                  if (inst.label == 1) positives.push_back(std::move(inst));
                }
                auto sampled = core::negative_sample(positives, pool, interacted, o.negatives, o.seed + salt++);
                short_pools += sampled.short_pools;
                ds->instances = std::move(sampled.instances);
              }
            }
            if (!o.profiles.empty()) {
              const auto store = core::parse_profiles(fs::path(o.profiles));
              manifest.input("profiles", o.profiles);
              store.attach(split.train.instances);
              store.attach(split.test.instances);
              store.attach(split.graph_source.instances);
            }
            const fs::path dir = o.out_dir;
            graphs::save_sim_graph(dir / "simgraph.tsv", sim);
            core::write_instances(dir / "train.jsonl", split.train.instances);
            core::write_instances(dir / "test.jsonl", split.test.instances);
            core::write_instances(dir / "graph_source.jsonl", split.graph_source.instances);
            for (const char* f : {"simgraph.tsv", "train.jsonl", "test.jsonl", "graph_source.jsonl"}) {
              manifest.output(dir / f);
            }
            manifest.write(manifest_path(o.manifest, dir / "build-simgraph.manifest.json"), o.seed);
            out << "train: " << split.train.instances.size() << "\ntest: " << split.test.instances.size()
                << "\ngraph_source: " << split.graph_source.instances.size() << "\nsim_edges: " << sim.edge_count()
                << '\n';
            if (short_pools > 0) out << "warning: " << short_pools << " positives had fewer eligible negatives\n";
          }};
}

Command extract_paths(CLI::App& app, Options& o) {
  auto* sub = app.add_subcommand("extract-paths", "Extract top-k relational paths per instance from both graphs");
  add_common(sub, o.config, o.manifest, o.seed);
  sub->add_option("--instances", o.instances, "Instances JSONL")->required()->check(CLI::ExistingFile)
      ->group(kFilesGroup);
  sub->add_option("--simgraph", o.simgraph, "Similarity graph TSV")->required()->check(CLI::ExistingFile)
      ->group(kFilesGroup);
  sub->add_option("--triples", o.triples, "Knowledge-graph triples TSV")->required()->check(CLI::ExistingFile)
      ->group(kFilesGroup);
  sub->add_option("--profiles", o.profiles, "Profile features TSV; its items are marked as item nodes")
      ->check(CLI::ExistingFile)->group(kFilesGroup);
  sub->add_option("--out", o.out, "Paths JSONL")->required()->group(kFilesGroup);
  auto& e = o.extract;
  sub->add_option("--max-hops-cf", e.max_hops_cf, "Hop limit on the similarity graph")->group(kSettingsGroup);
  sub->add_option("--max-hops-kg", e.max_hops_kg, "Hop limit on the knowledge graph")->group(kSettingsGroup);
  sub->add_option("--k-cf", e.k_cf, "Similarity-graph paths kept per instance")->group(kSettingsGroup);
  sub->add_option("--k-kg", e.k_kg, "Knowledge-graph paths kept per instance")->group(kSettingsGroup);
  sub->add_option("--max-path-len", e.max_path_len, "Token cap per path")->group(kSettingsGroup);
  sub->add_option("--threads", o.threads, "Worker threads")->group(kSettingsGroup);
  return {sub, [&o, sub](std::ostream& out) {
            if (o.threads == 0) throw UsageError("--threads must be at least 1");
            if (o.extract.max_hops_cf == 0 || o.extract.max_hops_kg == 0) throw UsageError("max hops must be at least 1");
            if (o.extract.k_cf == 0 || o.extract.k_kg == 0) throw UsageError("k must be at least 1");
            Manifest manifest("extract-paths", *sub);
            const auto instances = core::read_instances(fs::path(o.instances));
            manifest.input("instances", o.instances);
            const auto sim = graphs::load_sim_graph(fs::path(o.simgraph));
            manifest.input("simgraph", o.simgraph);
            auto kg = graphs::load_triples(fs::path(o.triples));
            manifest.input("triples", o.triples);

            std::set<core::ItemId> items(sim.items().names().begin(), sim.items().names().end());
            for (const auto& inst : instances) {
              items.insert(inst.target);
              items.insert(inst.behaviors.begin(), inst.behaviors.end());
            }
            if (!o.profiles.empty()) {
              auto in = detail::open_input(o.profiles);
              std::string line;
              while (std::getline(in, line)) {
                const auto f = detail::split_tabs(detail::strip_cr(line));
                if (f.size() >= 2 && f[0] == "item") items.insert(std::string(f[1]));
              }
              manifest.input("profiles", o.profiles);
            }
            kg.mark_items({items.begin(), items.end()});

            paths::ExtractStats stats;
            const auto sets = paths::extract_all(instances, sim, kg, o.extract, o.threads, &stats);
            paths::write_path_sets(fs::path(o.out), sets, sim, kg);
            manifest.output(o.out);
            manifest.write(manifest_path(o.manifest, o.out + ".manifest.json"), o.seed);
            out << "instances: " << stats.instances << "\ncf_paths: " << stats.cf_paths
                << "\nkg_paths: " << stats.kg_paths << "\ninstances_without_paths: " << stats.instances_without_paths
                << '\n';
          }};
}

Command train_cmd(CLI::App& app, Options& o) {
  auto* sub = app.add_subcommand("train", "Train a model variant with Adagrad");
  add_common(sub, o.config, o.manifest, o.seed);
  sub->add_option("--train", o.train_file, "Training instances JSONL")->required()->check(CLI::ExistingFile)
      ->group(kFilesGroup);
  sub->add_option("--paths", o.paths, "Paths JSONL aligned with the instances")->required()
      ->check(CLI::ExistingFile)->group(kFilesGroup);
  sub->add_option("--out-dir", o.out_dir, "Directory for checkpoint.json and loss.csv")->required()
      ->group(kFilesGroup);
  sub->add_option("--variant", o.variant,
                  "full | cf_only | kg_only | no_fusion | avgpool_baseline | prodattn_baseline")
      ->group(kSettingsGroup);
  sub->add_option("--epochs", o.epochs, "Training epochs")->group(kSettingsGroup);
  sub->add_option("--batch-size", o.batch_size, "Minibatch size")->group(kSettingsGroup);
  sub->add_option("--lr", o.lr, "Adagrad learning rate")->group(kSettingsGroup);
  sub->add_option("--epsilon", o.epsilon, "Adagrad epsilon")->group(kSettingsGroup);
  sub->add_option("--init-range", o.init_range, "Uniform initializer half-width")->group(kSettingsGroup);
  sub->add_option("--embedding-dim", o.embedding_dim, "Embedding size d")->group(kSettingsGroup);
  sub->add_option("--hidden", o.hidden, "Bi-LSTM hidden size H")->group(kSettingsGroup);
  sub->add_option("--mlp", o.mlp, "Hidden layer widths, comma-separated")->group(kSettingsGroup);
  return {sub, [&o, sub](std::ostream& out) {
            train::TrainConfig config;
            try {
              config.variant = model::variant_from_string(o.variant);
            } catch (const Error& e) {
              throw UsageError(e.what());
            }
            if (o.batch_size == 0) throw UsageError("--batch-size must be at least 1");
            if (!(o.init_range > 0.0)) throw UsageError("--init-range must be positive");
            if (!(o.lr > 0.0)) throw UsageError("--lr must be positive");
            if (o.embedding_dim == 0 || o.hidden == 0) throw UsageError("--embedding-dim and --hidden must be positive");
            config.batch_size = o.batch_size;
            config.epochs = o.epochs;
            config.seed = o.seed;
            config.init_range = o.init_range;
            config.learning_rate = o.lr;
            config.epsilon = o.epsilon;
            model::ModelDims dims;
            dims.embedding_dim = o.embedding_dim;
            dims.hidden = o.hidden;
            dims.mlp = parse_sizes(o.mlp, "--mlp");

            Manifest manifest("train", *sub);
            const auto instances = core::read_instances(fs::path(o.train_file));
            manifest.input("train", o.train_file);
            const auto sets = paths::read_path_sets(fs::path(o.paths));
            manifest.input("paths", o.paths);
            check_alignment(instances, sets);

            auto params = train::init_params(config, model::build_vocab(instances, sets), dims);
            const auto data = encode_all(params.embeddings, instances, sets);
            const auto result = train::train(params, data, config, [&](const train::LossRecord& r) {
              out << "epoch " << r.epoch << " step " << r.step << " mean_loss " << detail::format_fixed(r.mean_loss, 6)
                  << '\n';
            });
            const fs::path dir = o.out_dir;
            model::save_checkpoint(dir / "checkpoint.json", params);
            train::write_loss_log(dir / "loss.csv", result.log);
            manifest.output(dir / "checkpoint.json");
            manifest.output(dir / "loss.csv");
            manifest.write(manifest_path(o.manifest, dir / "train.manifest.json"), o.seed);
          }};
}

Command evaluate_cmd(CLI::App& app, Options& o) {
  auto* sub = app.add_subcommand("evaluate", "Score instances with a checkpoint and report AUC and logloss");
  add_common(sub, o.config, o.manifest, o.seed);
  sub->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile)
      ->group(kFilesGroup);
  sub->add_option("--instances", o.instances, "Instances JSONL")->required()->check(CLI::ExistingFile)
      ->group(kFilesGroup);
  sub->add_option("--paths", o.paths, "Paths JSONL aligned with the instances")->required()
      ->check(CLI::ExistingFile)->group(kFilesGroup);
  sub->add_option("--out", o.out, "Report path")->required()->group(kFilesGroup);
  sub->add_option("--predictions", o.predictions, "Optional CSV of per-instance predictions")->group(kFilesGroup);
  sub->add_option("--format", o.format, "Report format: json | csv")
      ->check(CLI::IsMember({"json", "csv"}))->group(kSettingsGroup);
  return {sub, [&o, sub](std::ostream& out) {
            Manifest manifest("evaluate", *sub);
            auto params = model::load_checkpoint(o.checkpoint);
            manifest.input("checkpoint", o.checkpoint);
            const auto instances = core::read_instances(fs::path(o.instances));
            manifest.input("instances", o.instances);
            const auto sets = paths::read_path_sets(fs::path(o.paths));
            manifest.input("paths", o.paths);
            check_alignment(instances, sets);
            const auto data = encode_all(params.embeddings, instances, sets);
            const auto scores = model::predict_all(params, data);
            std::vector<int> labels;
            for (const auto& inst : instances) labels.push_back(inst.label);
            const auto report = eval::evaluate(scores, labels);

            std::string text;
            if (o.format == "json") {
              const json j{{"variant", model::to_string(params.variant)},
                           {"auc", report.auc ? json(*report.auc) : json(nullptr)},
                           {"auc_defined", report.auc.has_value()},
                           {"logloss", report.logloss},
                           {"n_pos", report.n_pos},
                           {"n_neg", report.n_neg}};
              text = j.dump(2) + "\n";
            } else {
              text = "metric,value\nauc," + (report.auc ? detail::format_shortest(*report.auc) : std::string("undefined")) +
                     "\nlogloss," + detail::format_shortest(report.logloss) + "\nn_pos," + std::to_string(report.n_pos) +
                     "\nn_neg," + std::to_string(report.n_neg) + "\n";
            }
            {
              auto f = detail::open_output(o.out);
              f << text;
            }
            manifest.output(o.out);
            if (!o.predictions.empty()) {
              auto f = detail::open_output(o.predictions);
              f << "index,user,target,label,score\n";
              for (std::size_t i = 0; i < instances.size(); ++i) {
                f << i << ',' << instances[i].user << ',' << instances[i].target << ',' << instances[i].label << ','
                  << detail::format_shortest(scores[i]) << '\n';
              }
              f.close();
              manifest.output(o.predictions);
            }
            manifest.write(manifest_path(o.manifest, o.out + ".manifest.json"), o.seed);
            out << text;
            if (!report.auc) out << "warning: AUC undefined, the set holds a single class\n";
          }};
}

Command analyze_paths(CLI::App& app, Options& o) {
  auto* sub = app.add_subcommand("analyze-paths", "Click rate by path count and path length for both graphs");
  add_common(sub, o.config, o.manifest, o.seed);
  sub->add_option("--instances", o.instances, "Instances JSONL")->required()->check(CLI::ExistingFile)
      ->group(kFilesGroup);
  sub->add_option("--paths", o.paths, "Paths JSONL aligned with the instances")->required()
      ->check(CLI::ExistingFile)->group(kFilesGroup);
  sub->add_option("--out-dir", o.out_dir, "Directory for path_stats.{json,csv,gp}")->required()->group(kFilesGroup);
  sub->add_option("--format", o.format, "Format printed to stdout: json | csv")
      ->check(CLI::IsMember({"json", "csv"}))->group(kSettingsGroup);
  return {sub, [&o, sub](std::ostream& out) {
            Manifest manifest("analyze-paths", *sub);
            const auto instances = core::read_instances(fs::path(o.instances));
            manifest.input("instances", o.instances);
            const auto sets = paths::read_path_sets(fs::path(o.paths));
            manifest.input("paths", o.paths);
            check_alignment(instances, sets);
            const auto report = eval::path_validity_analysis(instances, sets);
            const fs::path dir = o.out_dir;
            const std::string js = eval::path_stats_to_json(report) + "\n";
            std::ostringstream csv;
            eval::write_path_stats_csv(csv, report);
            {
              auto f = detail::open_output(dir / "path_stats.json");
              f << js;
            }
            {
              auto f = detail::open_output(dir / "path_stats.csv");
              f << csv.str();
            }
            {
              auto f = detail::open_output(dir / "path_stats.gp");
              f << eval::path_stats_gnuplot("path_stats.csv");
            }
            for (const char* f : {"path_stats.json", "path_stats.csv", "path_stats.gp"}) manifest.output(dir / f);
            manifest.write(manifest_path(o.manifest, dir / "analyze-paths.manifest.json"), o.seed);
            out << (o.format == "json" ? js : csv.str());
          }};
}

Command grad_check_cmd(CLI::App& app, Options& o, int& status) {
  auto* sub = app.add_subcommand("grad-check", "Compare analytic and finite-difference gradients on a micro model");
  add_common(sub, o.config, o.manifest, o.seed);
  sub->add_option("--variant", o.variant, "Model variant")->group(kSettingsGroup);
  sub->add_option("--tol", o.tol, "Maximum relative error")->group(kSettingsGroup);
  sub->add_option("--step", o.step, "Central-difference step")->group(kSettingsGroup);
  sub->add_option("--out", o.out, "Optional JSON report")->group(kFilesGroup);
  return {sub, [&o, sub, &status](std::ostream& out) {
            model::ModelVariant variant;
            try {
              variant = model::variant_from_string(o.variant);
            } catch (const Error& e) {
              throw UsageError(e.what());
            }
            if (!(o.step > 0.0) || !(o.tol > 0.0)) throw UsageError("--step and --tol must be positive");
            Manifest manifest("grad-check", *sub);
            auto problem = model::make_micro_problem(variant, o.seed);
            tensor::GradCheckOptions options;
            options.step = o.step;
            options.tolerance = o.tol;
            const auto report = model::check_model_gradients(problem, options);
            std::ostringstream worst;
            worst << std::scientific << std::setprecision(3) << report.max_rel_error;
            out << "variant: " << model::to_string(variant) << "\nchecked: " << report.checked
                << "\nexcluded_kinks: " << report.excluded_kinks << "\nmax_rel_error: " << worst.str() << "\n"
                << (report.passed ? "PASS" : "FAIL") << '\n';
            if (!o.out.empty()) {
              json params = json::array();
              for (const auto& p : report.params) {
                params.push_back({{"name", p.name},
                                  {"max_rel_error", p.max_rel_error},
                                  {"checked", p.checked},
                                  {"excluded_kinks", p.excluded_kinks}});
              }
              const json j{{"variant", model::to_string(variant)}, {"tolerance", o.tol},
                           {"max_rel_error", report.max_rel_error}, {"passed", report.passed},
                           {"parameters", params}};
              auto f = detail::open_output(o.out);
              f << j.dump(2) << '\n';
              f.close();
              manifest.output(o.out);
            }
            manifest.write(manifest_path(o.manifest, "grad-check.manifest.json"), o.seed);
            status = report.passed ? 0 : 1;
          }};
}

// ---------------------------------------------------------------------------
// Config injection

std::string flag_name(const std::string& arg) {
  if (arg.rfind("--", 0) != 0) return "";
  const auto eq = arg.find('=');
  return arg.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
}

std::optional<std::string> find_config_arg(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

std::vector<std::string> config_args(const ConfigFile& cfg, const CLI::App& sub, const std::set<std::string>& given,
                                     std::ostream& err) {
  const std::string name = sub.get_name();
  auto known = [&](const std::string& key) {
    return key != "config" && sub.get_option_no_throw("--" + key) != nullptr;
  };
  std::map<std::string, std::pair<std::string, std::string>> chosen;  // key -> (value, where)
  for (const auto& [key, entry] : cfg.global) {
    if (known(key)) chosen[key] = {entry.value, cfg.source + ":" + std::to_string(entry.line)};
  }
  if (const auto it = cfg.sections.find(name); it != cfg.sections.end()) {
    for (const auto& [key, entry] : it->second) {
      const std::string where = cfg.source + ":" + std::to_string(entry.line);
      if (!known(key)) throw UsageError("config key '" + key + "' (" + where + ") is not an option of " + name);
      if (const auto g = cfg.global.find(key); g != cfg.global.end() && g->second.value != entry.value) {
        throw UsageError("config conflict for '" + key + "': '" + g->second.value + "' at " + cfg.source + ":" +
                         std::to_string(g->second.line) + " vs '" + entry.value + "' at " + where);
      }
      chosen[key] = {entry.value, where};
    }
  }
  std::vector<std::string> out;
  for (const auto& [key, vw] : chosen) {
    if (given.contains(key)) {
      err << "note: --" << key << " on the command line overrides '" << vw.first << "' from " << vw.second << '\n';
      continue;
    }
    out.push_back("--" + key);
    out.push_back(vw.first);
  }
  return out;
}

void print_error(std::ostream& err, const std::string& command, const std::string& kind, const std::string& message) {
  const json j{{"error", {{"command", command}, {"kind", kind}, {"message", message}}}};
  err << j.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multiplex relational path CTR pipeline"};
  app.name("mtbrn");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Options o;
  int status = 0;
  std::vector<Command> commands{gen_synth(app, o),    build_simgraph(app, o), extract_paths(app, o),
                                train_cmd(app, o),    evaluate_cmd(app, o),   analyze_paths(app, o),
                                grad_check_cmd(app, o, status)};

  std::vector<std::string> argv = args;
  std::string command = args.empty() ? "" : args.front();
  try {
    if (const auto path = find_config_arg(args); path && !args.empty()) {
      const auto it = std::find_if(commands.begin(), commands.end(),
                                   [&](const Command& c) { return c.app->get_name() == command; });
      if (it != commands.end()) {
        auto in = detail::open_input(*path);
        const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto cfg = parse_config(text, *path);
        std::set<std::string> given;
        for (std::size_t i = 1; i < args.size(); ++i) {
          if (const auto f = flag_name(args[i]); !f.empty()) given.insert(f);
        }
        auto injected = config_args(cfg, *it->app, given, err);
        argv.insert(argv.begin() + 1, injected.begin(), injected.end());
      }
    }
  } catch (const UsageError& e) {
    print_error(err, command, "usage", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error(err, command, "config", e.what());
    return 2;
  }

  try {
    std::reverse(argv.begin(), argv.end());
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, command, "usage", e.what());
    err << "run 'mtbrn " << (command.empty() || command.rfind("-", 0) == 0 ? "" : command + " ") << "--help' for usage\n";
    return 2;
  }

  for (const auto& c : commands) {
    if (!c.app->parsed()) continue;
    try {
      c.action(out);
      return status;
    } catch (const UsageError& e) {
      print_error(err, command, "usage", e.what());
      return 2;
    } catch (const ParseError& e) {
      print_error(err, command, "input", e.what());
      return 1;
    } catch (const IoError& e) {
      print_error(err, command, "io", e.what());
      return 1;
    } catch (const std::exception& e) {
      print_error(err, command, "runtime", e.what());
      return 1;
    }
  }
  return 2;
}

}  // namespace mtbrn::cli
