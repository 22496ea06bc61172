#include "mtbrn/core.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

#include "mtbrn/error.hpp"
#include "text_io.hpp"

namespace mtbrn {

ParseError::ParseError(std::string source, std::size_t line, std::size_t field, const std::string& what)
    : Error(source + ":" + std::to_string(line) + (field > 0 ? ": field " + std::to_string(field) : "") +
            ": " + what),
      source_(std::move(source)),
      line_(line),
      field_(field) {}

namespace detail {

std::optional<double> parse_real(std::string_view text) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::string format_fixed(double value, int digits) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed, digits);
  if (ec != std::errc()) throw Error("format_fixed: value out of range");
  return std::string(buf, ptr);
}

std::string format_shortest(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("format_shortest: value out of range");
  return std::string(buf, ptr);
}

}  // namespace detail

namespace core {

const char* to_string(FeatureKind kind) { return kind == FeatureKind::sparse ? "sparse" : "numerical"; }

FeatureKind feature_kind_from_string(const std::string& text) {
  if (text == "sparse") return FeatureKind::sparse;
  if (text == "numerical") return FeatureKind::numerical;
  throw Error("unknown feature kind '" + text + "'");
}

std::vector<Interaction> parse_interactions(std::istream& in, const std::string& source) {
  std::vector<Interaction> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_tabs(detail::strip_cr(line));
    if (fields.size() != 4) {
      throw ParseError(source, line_no, 0, "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw ParseError(source, line_no, 1, "empty user id");
    if (fields[1].empty()) throw ParseError(source, line_no, 2, "empty item id");
    const auto ts = detail::parse_integer<std::int64_t>(fields[2]);
    if (!ts || *ts < 0) {
      throw ParseError(source, line_no, 3, "timestamp '" + std::string(fields[2]) + "' is not a nonnegative integer");
    }
    const auto label = detail::parse_integer<int>(fields[3]);
    if (!label || (*label != 0 && *label != 1)) {
      throw ParseError(source, line_no, 4, "label '" + std::string(fields[3]) + "' is not 0 or 1");
    }
    rows.push_back({std::string(fields[0]), std::string(fields[1]), *ts, *label});
  }
  return rows;
}

std::vector<Interaction> parse_interactions(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_interactions(in, path.string());
}

void write_interactions(std::ostream& out, const std::vector<Interaction>& log) {
  for (const auto& row : log) {
    out << row.user << '\t' << row.item << '\t' << row.timestamp << '\t' << row.label << '\n';
  }
}

// ---------------------------------------------------------------------------
// Profiles

namespace {

const std::vector<FeatureValue>& lookup_or_empty(const std::map<std::string, std::vector<FeatureValue>>& table,
                                                 const std::string& id) {
  static const std::vector<FeatureValue> empty;
  const auto it = table.find(id);
  return it == table.end() ? empty : it->second;
}

void note_field(std::vector<FieldSpec>& fields, const FeatureValue& value) {
  for (const auto& spec : fields) {
    if (spec.field == value.field) {
      if (spec.kind != value.kind) {
        throw Error("field '" + value.field + "' declared both sparse and numerical");
      }
      return;
    }
  }
  fields.push_back({value.field, value.kind});
}

}  // namespace

void ProfileStore::add(const std::string& entity_kind, const std::string& entity_id, FeatureValue value) {
  if (entity_kind == "user") {
    note_field(user_fields_, value);
    users_[entity_id].push_back(std::move(value));
  } else if (entity_kind == "item") {
    note_field(item_fields_, value);
    items_[entity_id].push_back(std::move(value));
  } else {
    throw Error("unknown entity kind '" + entity_kind + "' (expected user or item)");
  }
}

const std::vector<FeatureValue>& ProfileStore::user(const UserId& id) const { return lookup_or_empty(users_, id); }
const std::vector<FeatureValue>& ProfileStore::item(const ItemId& id) const { return lookup_or_empty(items_, id); }

void ProfileStore::attach(std::vector<Instance>& instances) const {
  for (auto& inst : instances) {
    inst.user_features = user(inst.user);
    inst.target_features = item(inst.target);
  }
}

ProfileStore parse_profiles(std::istream& in, const std::string& source) {
  ProfileStore store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_tabs(detail::strip_cr(line));
    if (fields.size() != 5) {
      throw ParseError(source, line_no, 0, "expected 5 tab-separated fields, got " + std::to_string(fields.size()));
    }
    const std::string entity_kind(fields[0]);
    if (entity_kind != "user" && entity_kind != "item") {
      throw ParseError(source, line_no, 1, "entity kind must be 'user' or 'item'");
    }
    if (fields[1].empty()) throw ParseError(source, line_no, 2, "empty entity id");
    if (fields[2].empty()) throw ParseError(source, line_no, 3, "empty field id");
    FeatureValue value;
    value.field = std::string(fields[2]);
    if (fields[3] == "sparse") {
      value.kind = FeatureKind::sparse;
      const auto token = detail::parse_integer<std::uint64_t>(fields[4]);
      if (!token) throw ParseError(source, line_no, 5, "sparse value must be a nonnegative integer");
      value.token = *token;
    } else if (fields[3] == "numerical") {
      value.kind = FeatureKind::numerical;
      const auto real = detail::parse_real(fields[4]);
      if (!real) throw ParseError(source, line_no, 5, "numerical value must be a finite real");
      value.value = *real;
    } else {
      throw ParseError(source, line_no, 4, "kind must be 'sparse' or 'numerical'");
    }
    try {
      store.add(entity_kind, std::string(fields[1]), std::move(value));
    } catch (const Error& e) {
      throw ParseError(source, line_no, 3, e.what());
    }
  }
  return store;
}

ProfileStore parse_profiles(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_profiles(in, path.string());
}

// ---------------------------------------------------------------------------
// Instances

std::vector<Instance> build_instances(const std::vector<Interaction>& log, std::size_t max_behaviors) {
  std::vector<std::size_t> order(log.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (log[a].user != log[b].user) return log[a].user < log[b].user;
    return log[a].timestamp < log[b].timestamp;
  });

  struct Click {
    const ItemId* item;
    std::int64_t timestamp;
  };

  std::vector<Instance> out;
  out.reserve(log.size());
  std::vector<Click> clicks;
  const UserId* current_user = nullptr;
  for (const auto idx : order) {
    const auto& row = log[idx];
    if (current_user == nullptr || *current_user != row.user) {
      clicks.clear();
      current_user = &row.user;
    }
    Instance inst;
    inst.user = row.user;
    inst.target = row.item;
    inst.timestamp = row.timestamp;
    inst.label = row.label;
    // Clicks are time-ordered; walk back from the newest strictly-earlier one.
    for (auto it = clicks.rbegin(); it != clicks.rend() && inst.behaviors.size() < max_behaviors; ++it) {
      if (it->timestamp >= row.timestamp) continue;
      if (*it->item == row.item) continue;
      inst.behaviors.push_back(*it->item);
    }
    std::reverse(inst.behaviors.begin(), inst.behaviors.end());
    out.push_back(std::move(inst));
    if (row.label == 1) clicks.push_back({&row.item, row.timestamp});
  }
  return out;
}

Split chronological_split(const std::vector<Instance>& instances, std::size_t test_tail, std::size_t train_window) {
  Split split;
  std::size_t begin = 0;
  while (begin < instances.size()) {
    std::size_t end = begin;
    while (end < instances.size() && instances[end].user == instances[begin].user) ++end;
    const std::size_t n = end - begin;
    if (n < test_tail) {
      split.graph_source.instances.insert(split.graph_source.instances.end(), instances.begin() + begin,
                                          instances.begin() + end);
    } else {
      const std::size_t test_begin = end - test_tail;
      const std::size_t train_begin = test_begin - std::min(train_window, test_begin - begin);
      auto first = instances.begin();
      split.graph_source.instances.insert(split.graph_source.instances.end(), first + begin, first + train_begin);
      split.train.instances.insert(split.train.instances.end(), first + train_begin, first + test_begin);
      split.test.instances.insert(split.test.instances.end(), first + test_begin, first + end);
    }
    begin = end;
  }
  return split;
}

std::map<UserId, std::set<ItemId>> interacted_items(const std::vector<Interaction>& log) {
  std::map<UserId, std::set<ItemId>> out;
  for (const auto& row : log) out[row.user].insert(row.item);
  return out;
}

NegativeSampleResult negative_sample(const std::vector<Instance>& positives, const std::set<ItemId>& item_pool,
                                     const std::map<UserId, std::set<ItemId>>& interacted, std::size_t ratio,
                                     std::uint64_t seed) {
  if (ratio < 1) throw Error("negative_sample: ratio must be >= 1");
  NegativeSampleResult result;
  result.instances.reserve(positives.size() * (ratio + 1));
  std::mt19937_64 rng(seed);
  static const std::set<ItemId> nothing;
  std::vector<const ItemId*> eligible;
  for (const auto& pos : positives) {
    result.instances.push_back(pos);
    const auto it = interacted.find(pos.user);
    const auto& seen = it == interacted.end() ? nothing : it->second;
    eligible.clear();
    for (const auto& item : item_pool) {
      if (item != pos.target && !seen.contains(item)) eligible.push_back(&item);
    }
    const std::size_t draws = std::min(ratio, eligible.size());
    if (draws < ratio) ++result.short_pools;
    // Partial Fisher-Yates: the first `draws` slots become the sample.
    for (std::size_t k = 0; k < draws; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, eligible.size() - 1);
      std::swap(eligible[k], eligible[pick(rng)]);
      Instance neg = pos;
      neg.target = *eligible[k];
      neg.label = 0;
      neg.target_features.clear();
      result.instances.push_back(std::move(neg));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// JSON Lines

namespace {

nlohmann::json features_to_json(const std::vector<FeatureValue>& features) {
  auto arr = nlohmann::json::array();
  for (const auto& f : features) {
    nlohmann::json obj{{"field", f.field}, {"kind", to_string(f.kind)}};
    if (f.kind == FeatureKind::sparse) {
      obj["value"] = f.token;
    } else {
      obj["value"] = f.value;
    }
    arr.push_back(std::move(obj));
  }
  return arr;
}

std::vector<FeatureValue> features_from_json(const nlohmann::json& arr) {
  std::vector<FeatureValue> out;
  for (const auto& obj : arr) {
    FeatureValue f;
    f.field = obj.at("field").get<std::string>();
    f.kind = feature_kind_from_string(obj.at("kind").get<std::string>());
    if (f.kind == FeatureKind::sparse) {
      f.token = obj.at("value").get<std::uint64_t>();
    } else {
      f.value = obj.at("value").get<double>();
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace

void write_instances(std::ostream& out, const std::vector<Instance>& instances) {
  for (const auto& inst : instances) {
    const nlohmann::json obj{{"user", inst.user},
                             {"target", inst.target},
                             {"timestamp", inst.timestamp},
                             {"behaviors", inst.behaviors},
                             {"label", inst.label},
                             {"user_features", features_to_json(inst.user_features)},
                             {"target_features", features_to_json(inst.target_features)}};
    out << obj.dump() << '\n';
  }
}

void write_instances(const std::filesystem::path& path, const std::vector<Instance>& instances) {
  auto out = detail::open_output(path);
  write_instances(out, instances);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<Instance> read_instances(std::istream& in, const std::string& source) {
  std::vector<Instance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      Instance inst;
      inst.user = obj.at("user").get<std::string>();
      inst.target = obj.at("target").get<std::string>();
      inst.timestamp = obj.value("timestamp", std::int64_t{0});
      inst.behaviors = obj.at("behaviors").get<std::vector<std::string>>();
      inst.label = obj.at("label").get<int>();
      if (inst.label != 0 && inst.label != 1) throw Error("label must be 0 or 1");
      inst.user_features = features_from_json(obj.at("user_features"));
      inst.target_features = features_from_json(obj.at("target_features"));
      out.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, line_no, 0, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(source, line_no, 0, e.what());
    }
  }
  return out;
}

std::vector<Instance> read_instances(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return read_instances(in, path.string());
}

}  // namespace core
}  // namespace mtbrn
