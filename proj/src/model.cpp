#include "mtbrn/model.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mtbrn/error.hpp"
#include "text_io.hpp"

namespace mtbrn::model {

using tensor::kNoRow;
using json = nlohmann::json;

const char* to_string(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::full: return "full";
    case ModelVariant::cf_only: return "cf_only";
    case ModelVariant::kg_only: return "kg_only";
    case ModelVariant::no_fusion: return "no_fusion";
    case ModelVariant::avgpool_baseline: return "avgpool_baseline";
    case ModelVariant::prodattn_baseline: return "prodattn_baseline";
  }
  return "?";
}

const std::vector<ModelVariant>& all_variants() {
  static const std::vector<ModelVariant> variants{ModelVariant::full,      ModelVariant::cf_only,
                                                  ModelVariant::kg_only,   ModelVariant::no_fusion,
                                                  ModelVariant::avgpool_baseline, ModelVariant::prodattn_baseline};
  return variants;
}

ModelVariant variant_from_string(const std::string& text) {
  for (const auto v : all_variants()) {
    if (text == to_string(v)) return v;
  }
  throw Error("unknown model variant '" + text + "'");
}

bool uses_paths(ModelVariant variant) {
  return variant != ModelVariant::avgpool_baseline && variant != ModelVariant::prodattn_baseline;
}

namespace {

bool uses_cf(ModelVariant v) {
  return v == ModelVariant::full || v == ModelVariant::cf_only || v == ModelVariant::no_fusion;
}
bool uses_kg(ModelVariant v) {
  return v == ModelVariant::full || v == ModelVariant::kg_only || v == ModelVariant::no_fusion;
}
bool uses_fusion(ModelVariant v) { return v == ModelVariant::full; }

void note_fields(const std::vector<core::FeatureValue>& features, std::vector<core::FieldSpec>& specs,
                 std::vector<std::set<std::uint64_t>>& tokens) {
  for (const auto& f : features) {
    auto it = std::find_if(specs.begin(), specs.end(), [&](const core::FieldSpec& s) { return s.field == f.field; });
    if (it == specs.end()) {
      specs.push_back({f.field, f.kind});
      tokens.emplace_back();
      it = specs.end() - 1;
    } else if (it->kind != f.kind) {
      throw Error("feature field '" + f.field + "' appears as both sparse and numerical");
    }
    if (f.kind == core::FeatureKind::sparse) tokens[static_cast<std::size_t>(it - specs.begin())].insert(f.token);
  }
}

std::vector<std::vector<std::uint64_t>> to_vectors(const std::vector<std::set<std::uint64_t>>& sets) {
  std::vector<std::vector<std::uint64_t>> out;
  for (const auto& s : sets) out.emplace_back(s.begin(), s.end());
  return out;
}

std::size_t field_block_rows(const core::FieldSpec& spec, const std::vector<std::uint64_t>& tokens) {
  return spec.kind == core::FeatureKind::sparse ? tokens.size() + 1 : 1;
}

}  // namespace

ModelVocab build_vocab(const std::vector<core::Instance>& instances,
                       const std::vector<paths::NamedPathSet>& path_sets) {
  std::set<std::string> items;
  std::set<std::string> entities;
  std::set<std::string> relations;
  ModelVocab vocab;
  std::vector<std::set<std::uint64_t>> user_tokens;
  std::vector<std::set<std::uint64_t>> item_tokens;
  for (const auto& inst : instances) {
    items.insert(inst.target);
    items.insert(inst.behaviors.begin(), inst.behaviors.end());
    note_fields(inst.user_features, vocab.user_fields, user_tokens);
    note_fields(inst.target_features, vocab.item_fields, item_tokens);
  }
  for (const auto& set : path_sets) {
    for (const auto* group : {&set.cf, &set.kg}) {
      for (const auto& path : *group) {
        for (const auto& tok : path) {
          switch (tok.kind) {
            case paths::TokenKind::item: items.insert(tok.name); break;
            case paths::TokenKind::entity: entities.insert(tok.name); break;
            case paths::TokenKind::relation: relations.insert(tok.name); break;
            case paths::TokenKind::score: break;
          }
        }
      }
    }
  }
  vocab.items = graphs::Vocabulary({items.begin(), items.end()});
  vocab.entities = graphs::Vocabulary({entities.begin(), entities.end()});
  vocab.relations = graphs::Vocabulary({relations.begin(), relations.end()});
  vocab.user_tokens = to_vectors(user_tokens);
  vocab.item_tokens = to_vectors(item_tokens);
  return vocab;
}

// ---------------------------------------------------------------------------
// EmbeddingTable

EmbeddingTable::EmbeddingTable(ModelVocab vocab, std::size_t dim) : vocab_(std::move(vocab)) {
  std::size_t rows = vocab_.items.size() + 1;
  entity_offset_ = rows;
  rows += vocab_.entities.size() + 1;
  relation_offset_ = rows;
  rows += vocab_.relations.size() + 1;
  score_row_ = rows++;
  for (std::size_t f = 0; f < vocab_.user_fields.size(); ++f) {
    user_field_offsets_.push_back(rows);
    rows += field_block_rows(vocab_.user_fields[f], vocab_.user_tokens[f]);
  }
  for (std::size_t f = 0; f < vocab_.item_fields.size(); ++f) {
    item_field_offsets_.push_back(rows);
    rows += field_block_rows(vocab_.item_fields[f], vocab_.item_tokens[f]);
  }
  table_ = Parameter("embedding", Tensor(rows, dim), true);
}

std::size_t EmbeddingTable::item_row(const std::string& name) const {
  const auto id = vocab_.items.find(name);
  return id ? *id : vocab_.items.size();
}

std::size_t EmbeddingTable::entity_row(const std::string& name) const {
  const auto id = vocab_.entities.find(name);
  return entity_offset_ + (id ? *id : vocab_.entities.size());
}

std::size_t EmbeddingTable::relation_row(const std::string& name) const {
  const auto id = vocab_.relations.find(name);
  return relation_offset_ + (id ? *id : vocab_.relations.size());
}

std::size_t EmbeddingTable::field_count(FieldOwner owner) const {
  return owner == FieldOwner::user ? vocab_.user_fields.size() : vocab_.item_fields.size();
}

namespace {

std::optional<std::size_t> field_index(const std::vector<core::FieldSpec>& specs, const std::string& field) {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].field == field) return i;
  }
  return std::nullopt;
}

}  // namespace

std::pair<std::size_t, double> EmbeddingTable::feature_row(FieldOwner owner, const core::FeatureValue& feature) const {
  const bool user = owner == FieldOwner::user;
  const auto& specs = user ? vocab_.user_fields : vocab_.item_fields;
  const auto index = field_index(specs, feature.field);
  if (!index) {
    throw Error(std::string("unknown ") + (user ? "user" : "item") + " feature field '" + feature.field + "'");
  }
  if (specs[*index].kind != feature.kind) {
    throw Error("feature field '" + feature.field + "' has kind " + core::to_string(feature.kind) + ", expected " +
                core::to_string(specs[*index].kind));
  }
  const std::size_t offset = (user ? user_field_offsets_ : item_field_offsets_)[*index];
  if (feature.kind == core::FeatureKind::numerical) return {offset, feature.value};
  const auto& tokens = (user ? vocab_.user_tokens : vocab_.item_tokens)[*index];
  const auto it = std::lower_bound(tokens.begin(), tokens.end(), feature.token);
  const std::size_t pos = (it != tokens.end() && *it == feature.token) ? static_cast<std::size_t>(it - tokens.begin())
                                                                       : tokens.size();
  return {offset + pos, 1.0};
}

// ---------------------------------------------------------------------------
// Parameter blocks

LstmCell::LstmCell(const std::string& prefix, std::size_t input, std::size_t hidden)
    : W_xi(prefix + ".W_xi", Tensor(input, hidden)),
      W_hi(prefix + ".W_hi", Tensor(hidden, hidden)),
      W_ci(prefix + ".W_ci", Tensor(hidden, hidden)),
      W_xf(prefix + ".W_xf", Tensor(input, hidden)),
      W_hf(prefix + ".W_hf", Tensor(hidden, hidden)),
      W_cf(prefix + ".W_cf", Tensor(hidden, hidden)),
      W_xc(prefix + ".W_xc", Tensor(input, hidden)),
      W_hc(prefix + ".W_hc", Tensor(hidden, hidden)),
      W_xo(prefix + ".W_xo", Tensor(input, hidden)),
      W_ho(prefix + ".W_ho", Tensor(hidden, hidden)),
      W_co(prefix + ".W_co", Tensor(hidden, hidden)),
      b_i(prefix + ".b_i", Tensor(1, hidden)),
      b_f(prefix + ".b_f", Tensor(1, hidden)),
      b_c(prefix + ".b_c", Tensor(1, hidden)),
      b_o(prefix + ".b_o", Tensor(1, hidden)) {}

std::vector<Parameter*> LstmCell::parameters() {
  return {&W_xi, &W_hi, &W_ci, &W_xf, &W_hf, &W_cf, &W_xc, &W_hc, &W_xo, &W_ho, &W_co, &b_i, &b_f, &b_c, &b_o};
}

BiLstmEncoder::BiLstmEncoder(const std::string& prefix, std::size_t input, std::size_t hidden)
    : forward(prefix + ".forward", input, hidden), backward(prefix + ".backward", input, hidden) {}

std::vector<Parameter*> BiLstmEncoder::parameters() {
  auto out = forward.parameters();
  const auto back = backward.parameters();
  out.insert(out.end(), back.begin(), back.end());
  return out;
}

AttentionParams::AttentionParams(const std::string& name, std::size_t path_width, std::size_t target_width)
    : W(name + ".W", Tensor(path_width, target_width)) {}

Mlp::Mlp(std::size_t input, const std::vector<std::size_t>& hidden) {
  std::size_t width = input;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    weights.emplace_back("mlp." + std::to_string(l) + ".W", Tensor(width, hidden[l]));
    biases.emplace_back("mlp." + std::to_string(l) + ".b", Tensor(1, hidden[l]));
    width = hidden[l];
  }
  weights.emplace_back("mlp.out.W", Tensor(width, 1));
  biases.emplace_back("mlp.out.b", Tensor(1, 1));
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    out.push_back(&biases[l]);
  }
  return out;
}

ModelParams::ModelParams(ModelVocab vocab, ModelDims dims_, ModelVariant variant_)
    : dims(std::move(dims_)), variant(variant_), embeddings(std::move(vocab), dims.embedding_dim) {
  const std::size_t d = dims.embedding_dim;
  const std::size_t h2 = 2 * dims.hidden;
  encoder_cf = BiLstmEncoder("encoder_cf", d, dims.hidden);
  encoder_kg = BiLstmEncoder("encoder_kg", d, dims.hidden);
  attn_cf = AttentionParams("attn_cf", h2, target_width());
  attn_kg = AttentionParams("attn_kg", h2, target_width());
  attn_fu = AttentionParams("attn_fu", h2, target_width());
  mlp = Mlp(mlp_input_width(), dims.mlp);
}

std::vector<Parameter*> ModelParams::parameters() {
  std::vector<Parameter*> out{&embeddings.param()};
  for (auto* enc : {&encoder_cf, &encoder_kg}) {
    const auto ps = enc->parameters();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  out.push_back(&attn_cf.W);
  out.push_back(&attn_kg.W);
  out.push_back(&attn_fu.W);
  const auto ps = mlp.parameters();
  out.insert(out.end(), ps.begin(), ps.end());
  return out;
}

std::size_t ModelParams::user_width() const {
  return dims.embedding_dim * embeddings.field_count(FieldOwner::user);
}

std::size_t ModelParams::target_width() const {
  return dims.embedding_dim * (1 + embeddings.field_count(FieldOwner::item));
}

std::size_t ModelParams::mlp_input_width() const {
  return user_width() + target_width() + (uses_paths(variant) ? 3 * 2 * dims.hidden : dims.embedding_dim);
}

bool is_bias(const Parameter& p) {
  const auto dot = p.name.rfind('.');
  const std::string leaf = dot == std::string::npos ? p.name : p.name.substr(dot + 1);
  return !leaf.empty() && leaf[0] == 'b';
}

// ---------------------------------------------------------------------------
// Encoding

EncodedSequence encode_features(const EmbeddingTable& table, FieldOwner owner,
                                const std::vector<core::FeatureValue>& features) {
  const auto& specs = owner == FieldOwner::user ? table.vocab().user_fields : table.vocab().item_fields;
  EncodedSequence seq;
  seq.rows.assign(specs.size(), kNoRow);
  seq.scales.assign(specs.size(), 0.0);
  for (const auto& f : features) {
    const auto [row, scale] = table.feature_row(owner, f);
    const std::size_t index = *field_index(specs, f.field);
    seq.rows[index] = row;
    seq.scales[index] = scale;
  }
  return seq;
}

EncodedSequence encode_path(const EmbeddingTable& table, const paths::NamedPath& path) {
  EncodedSequence seq;
  for (const auto& tok : path) {
    switch (tok.kind) {
      case paths::TokenKind::item:
        seq.rows.push_back(table.item_row(tok.name));
        seq.scales.push_back(1.0);
        break;
      case paths::TokenKind::entity:
        seq.rows.push_back(table.entity_row(tok.name));
        seq.scales.push_back(1.0);
        break;
      case paths::TokenKind::relation:
        seq.rows.push_back(table.relation_row(tok.name));
        seq.scales.push_back(1.0);
        break;
      case paths::TokenKind::score:
        seq.rows.push_back(table.score_row());
        seq.scales.push_back(tok.value);
        break;
    }
  }
  return seq;
}

EncodedInstance encode_instance(const EmbeddingTable& table, const core::Instance& instance,
                                const paths::NamedPathSet& path_set) {
  EncodedInstance enc;
  enc.user = encode_features(table, FieldOwner::user, instance.user_features);
  const auto item = encode_features(table, FieldOwner::item, instance.target_features);
  enc.target.rows.push_back(table.item_row(instance.target));
  enc.target.scales.push_back(1.0);
  enc.target.rows.insert(enc.target.rows.end(), item.rows.begin(), item.rows.end());
  enc.target.scales.insert(enc.target.scales.end(), item.scales.begin(), item.scales.end());
  for (const auto& b : instance.behaviors) enc.behaviors.push_back(table.item_row(b));
  for (const auto& p : path_set.cf) enc.cf_paths.push_back(encode_path(table, p));
  for (const auto& p : path_set.kg) enc.kg_paths.push_back(encode_path(table, p));
  enc.label = instance.label;
  return enc;
}

// ---------------------------------------------------------------------------
// Layers

namespace {

Var zeros(Tape& tape, std::size_t rows, std::size_t cols) { return tape.constant(Tensor(rows, cols)); }

Var linear(Var x, Var w, Var b) { return add(matmul(x, w), repeat_rows(b, x.rows())); }

struct CellVars {
  Var W_xi, W_hi, W_ci, W_xf, W_hf, W_cf, W_xc, W_hc, W_xo, W_ho, W_co;
  Var b_i, b_f, b_c, b_o;
};

CellVars bind(Tape& tape, LstmCell& c) {
  return {tape.param(c.W_xi), tape.param(c.W_hi), tape.param(c.W_ci), tape.param(c.W_xf), tape.param(c.W_hf),
          tape.param(c.W_cf), tape.param(c.W_xc), tape.param(c.W_hc), tape.param(c.W_xo), tape.param(c.W_ho),
          tape.param(c.W_co), tape.param(c.b_i),  tape.param(c.b_f),  tape.param(c.b_c),  tape.param(c.b_o)};
}

Var sum3(Var a, Var b, Var c) { return add(add(a, b), c); }

// Runs the peephole recurrence over xs (each n x d) from zero state and
// returns the final hidden state (n x H). At the first step h = c = 0, so the
// recurrent and forget terms vanish and are not computed.
Var run_cell(const CellVars& v, const std::vector<Var>& xs) {
  const std::size_t n = xs.front().rows();
  const Var bi = repeat_rows(v.b_i, n);
  const Var bf = repeat_rows(v.b_f, n);
  const Var bc = repeat_rows(v.b_c, n);
  const Var bo = repeat_rows(v.b_o, n);
  Var h;
  Var c;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const Var& x = xs[t];
    if (t == 0) {
      const Var i = sigmoid(add(matmul(x, v.W_xi), bi));
      const Var g = tanh(add(matmul(x, v.W_xc), bc));
      c = mul(i, g);
    } else {
      const Var i = sigmoid(add(sum3(matmul(x, v.W_xi), matmul(h, v.W_hi), matmul(c, v.W_ci)), bi));
      const Var f = sigmoid(add(sum3(matmul(x, v.W_xf), matmul(h, v.W_hf), matmul(c, v.W_cf)), bf));
      const Var g = tanh(sum3(matmul(x, v.W_xc), matmul(h, v.W_hc), bc));
      c = add(mul(f, c), mul(i, g));
    }
    Var o_pre = add(matmul(x, v.W_xo), matmul(c, v.W_co));
    if (t > 0) o_pre = add(o_pre, matmul(h, v.W_ho));
    const Var o = sigmoid(add(o_pre, bo));
    h = mul(o, tanh(c));
  }
  return h;
}

Var run_bidirectional(Tape& tape, BiLstmEncoder& encoder, std::vector<Var> xs) {
  const CellVars fwd = bind(tape, encoder.forward);
  const CellVars bwd = bind(tape, encoder.backward);
  const Var hf = run_cell(fwd, xs);
  std::reverse(xs.begin(), xs.end());
  const Var hb = run_cell(bwd, xs);
  return concat_cols(std::vector<Var>{hf, hb});
}

// Gathers per-instance rows of an embedding table: entry f of every
// sequence, as a (B x fields*d) block.
Var lookup_block(Tape& tape, EmbeddingTable& table, const std::vector<const EncodedSequence*>& seqs,
                 std::size_t fields) {
  const std::size_t n = seqs.size();
  if (fields == 0) return zeros(tape, n, 0);
  std::vector<std::size_t> rows;
  std::vector<double> scales;
  rows.reserve(n * fields);
  scales.reserve(n * fields);
  for (const auto* s : seqs) {
    if (s->rows.size() != fields) throw ShapeError("feature block has " + std::to_string(s->rows.size()) +
                                                   " entries, expected " + std::to_string(fields));
    rows.insert(rows.end(), s->rows.begin(), s->rows.end());
    scales.insert(scales.end(), s->scales.begin(), s->scales.end());
  }
  const Var flat = tensor::embedding_lookup(tape, table.param(), rows, scales);
  return reshape(flat, n, fields * table.dim());
}

// Target-conditioned attention of every segment of `paths` (P x 2H) against
// its instance's row of `target` (B x D).
Var attention_logits(Var paths, const std::vector<std::size_t>& offsets, Var target, Var w) {
  const Var projected = matmul(target, transpose(w));  // (B x 2H)
  std::vector<std::size_t> owner;
  owner.reserve(paths.rows());
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    owner.insert(owner.end(), offsets[s + 1] - offsets[s], s);
  }
  return row_sum(mul(paths, gather_rows(projected, std::move(owner))));
}

Var activate_segments(Tape& tape, Var paths, const std::vector<std::size_t>& offsets, Var target,
                      AttentionParams& attn) {
  const std::size_t segments = offsets.size() - 1;
  if (paths.rows() == 0) return zeros(tape, segments, attn.W.value.rows());
  const Var logits = attention_logits(paths, offsets, target, tape.param(attn.W));
  const Var weights = segment_softmax(logits, offsets);
  return segment_weighted_sum(weights, paths, offsets);
}

}  // namespace

Var embed_features(Tape& tape, EmbeddingTable& table, FieldOwner owner,
                   const std::vector<core::FeatureValue>& features) {
  const auto seq = encode_features(table, owner, features);
  return lookup_block(tape, table, {&seq}, table.field_count(owner));
}

Var embed_path(Tape& tape, EmbeddingTable& table, const paths::NamedPath& path) {
  const auto seq = encode_path(table, path);
  return tensor::embedding_lookup(tape, table.param(), seq.rows, seq.scales);
}

Var encode_path(Tape& tape, BiLstmEncoder& encoder, Var sequence) {
  if (sequence.rows() == 0) throw Error("encode_path: empty sequence");
  std::vector<Var> xs;
  for (std::size_t t = 0; t < sequence.rows(); ++t) xs.push_back(gather_rows(sequence, {t}));
  return run_bidirectional(tape, encoder, std::move(xs));
}

Var encode_sequences(Tape& tape, BiLstmEncoder& encoder, EmbeddingTable& table,
                     const std::vector<const EncodedSequence*>& sequences) {
  const std::size_t width = 2 * encoder.forward.hidden();
  if (sequences.empty()) return zeros(tape, 0, width);
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i]->rows.empty()) throw Error("encode_path: empty sequence");
    by_length[sequences[i]->rows.size()].push_back(i);
  }
  std::vector<Var> groups;
  std::vector<std::size_t> order;
  for (const auto& [length, members] : by_length) {
    std::vector<Var> xs;
    for (std::size_t t = 0; t < length; ++t) {
      std::vector<std::size_t> rows;
      std::vector<double> scales;
      for (const auto m : members) {
        rows.push_back(sequences[m]->rows[t]);
        scales.push_back(sequences[m]->scales[t]);
      }
      xs.push_back(tensor::embedding_lookup(tape, table.param(), rows, scales));
    }
    groups.push_back(run_bidirectional(tape, encoder, std::move(xs)));
    order.insert(order.end(), members.begin(), members.end());
  }
  const Var stacked = groups.size() == 1 ? groups.front() : concat_rows(groups);
  std::vector<std::size_t> inverse(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) inverse[order[pos]] = pos;
  return gather_rows(stacked, std::move(inverse));
}

Var fuse_paths(Tape&, Var h_cf, Var h_kg) {
  const Var all = concat_rows(std::vector<Var>{h_cf, h_kg});
  std::vector<std::size_t> out_offsets;
  return pairwise_products(all, {0, all.rows()}, out_offsets);
}

Var attention_weights(Tape& tape, Var paths, Var target, AttentionParams& attn) {
  const std::vector<std::size_t> offsets{0, paths.rows()};
  const Var logits = attention_logits(paths, offsets, target, tape.param(attn.W));
  return segment_softmax(logits, offsets);
}

Var activate_paths(Tape& tape, Var paths, Var target, AttentionParams& attn) {
  return activate_segments(tape, paths, {0, paths.rows()}, target, attn);
}

Var forward(Tape& tape, ModelParams& params, const std::vector<const EncodedInstance*>& batch) {
  const std::size_t n = batch.size();
  if (n == 0) throw Error("forward: empty batch");
  auto& table = params.embeddings;
  const std::size_t d = params.dims.embedding_dim;
  const std::size_t width = 2 * params.dims.hidden;
  const ModelVariant variant = params.variant;

  std::vector<const EncodedSequence*> users;
  std::vector<const EncodedSequence*> targets;
  for (const auto* inst : batch) {
    users.push_back(&inst->user);
    targets.push_back(&inst->target);
  }
  const Var x_u = lookup_block(tape, table, users, table.field_count(FieldOwner::user));
  const Var x_v = lookup_block(tape, table, targets, 1 + table.field_count(FieldOwner::item));

  std::vector<Var> inputs{x_u, x_v};
  if (uses_paths(variant)) {
    std::vector<const EncodedSequence*> cf_seqs;
    std::vector<const EncodedSequence*> kg_seqs;
    std::vector<std::size_t> cf_offsets{0};
    std::vector<std::size_t> kg_offsets{0};
    for (const auto* inst : batch) {
      if (uses_cf(variant)) {
        for (const auto& p : inst->cf_paths) cf_seqs.push_back(&p);
      }
      if (uses_kg(variant)) {
        for (const auto& p : inst->kg_paths) kg_seqs.push_back(&p);
      }
      cf_offsets.push_back(cf_seqs.size());
      kg_offsets.push_back(kg_seqs.size());
    }
    Var h_cf = encode_sequences(tape, params.encoder_cf, table, cf_seqs);
    Var h_kg = encode_sequences(tape, params.encoder_kg, table, kg_seqs);
    inputs.push_back(uses_cf(variant) ? activate_segments(tape, h_cf, cf_offsets, x_v, params.attn_cf)
                                      : zeros(tape, n, width));
    inputs.push_back(uses_kg(variant) ? activate_segments(tape, h_kg, kg_offsets, x_v, params.attn_kg)
                                      : zeros(tape, n, width));
    if (uses_fusion(variant)) {
      // Per instance: its cf rows followed by its kg rows.
      std::vector<std::size_t> rows;
      std::vector<std::size_t> offsets{0};
      const std::size_t kg_base = cf_seqs.size();
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t r = cf_offsets[b]; r < cf_offsets[b + 1]; ++r) rows.push_back(r);
        for (std::size_t r = kg_offsets[b]; r < kg_offsets[b + 1]; ++r) rows.push_back(kg_base + r);
        offsets.push_back(rows.size());
      }
      const Var both = gather_rows(concat_rows(std::vector<Var>{h_cf, h_kg}), std::move(rows));
      std::vector<std::size_t> fu_offsets;
      const Var fused = pairwise_products(both, offsets, fu_offsets);
      inputs.push_back(activate_segments(tape, fused, fu_offsets, x_v, params.attn_fu));
    } else {
      inputs.push_back(zeros(tape, n, width));
    }
  } else {
    std::vector<std::size_t> rows;
    std::vector<std::size_t> offsets{0};
    std::vector<std::size_t> target_rows;
    for (const auto* inst : batch) {
      rows.insert(rows.end(), inst->behaviors.begin(), inst->behaviors.end());
      offsets.push_back(rows.size());
      target_rows.push_back(inst->target.rows.front());
    }
    const Var behaviors = tensor::embedding_lookup(tape, table.param(), rows, std::vector<double>(rows.size(), 1.0));
    if (variant == ModelVariant::avgpool_baseline) {
      inputs.push_back(segment_mean(behaviors, offsets));
    } else if (rows.empty()) {
      inputs.push_back(zeros(tape, n, d));
    } else {
      const Var target_items =
          tensor::embedding_lookup(tape, table.param(), target_rows, std::vector<double>(n, 1.0));
      std::vector<std::size_t> owner;
      for (std::size_t b = 0; b < n; ++b) owner.insert(owner.end(), offsets[b + 1] - offsets[b], b);
      const Var logits = row_sum(mul(behaviors, gather_rows(target_items, std::move(owner))));
      const Var weights = segment_softmax(logits, offsets);
      inputs.push_back(segment_weighted_sum(weights, behaviors, offsets));
    }
  }

  Var z = concat_cols(inputs);
  if (z.cols() != params.mlp.weights.front().value.rows()) {
    throw ShapeError("forward: MLP input width " + std::to_string(z.cols()) + " does not match parameters " +
                     params.mlp.weights.front().value.shape_string());
  }
  const std::size_t layers = params.mlp.weights.size();
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    z = relu(linear(z, tape.param(params.mlp.weights[l]), tape.param(params.mlp.biases[l])));
  }
  return sigmoid(linear(z, tape.param(params.mlp.weights.back()), tape.param(params.mlp.biases.back())));
}

double predict(ModelParams& params, const EncodedInstance& instance) {
  Tape tape(false);
  return forward(tape, params, {&instance}).value()[0];
}

std::vector<double> predict_all(ModelParams& params, const std::vector<EncodedInstance>& instances,
                                std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(instances.size());
  for (std::size_t start = 0; start < instances.size(); start += batch_size) {
    const std::size_t stop = std::min(instances.size(), start + batch_size);
    std::vector<const EncodedInstance*> batch;
    for (std::size_t i = start; i < stop; ++i) batch.push_back(&instances[i]);
    Tape tape(false);
    const Var p = forward(tape, params, batch);
    out.insert(out.end(), p.value().data().begin(), p.value().data().end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

json fields_to_json(const std::vector<core::FieldSpec>& specs, const std::vector<std::vector<std::uint64_t>>& tokens) {
  json out = json::array();
  for (std::size_t f = 0; f < specs.size(); ++f) {
    out.push_back({{"field", specs[f].field}, {"kind", core::to_string(specs[f].kind)}, {"tokens", tokens[f]}});
  }
  return out;
}

void fields_from_json(const json& j, std::vector<core::FieldSpec>& specs,
                      std::vector<std::vector<std::uint64_t>>& tokens) {
  for (const auto& f : j) {
    specs.push_back({f.at("field").get<std::string>(),
                     core::feature_kind_from_string(f.at("kind").get<std::string>())});
    tokens.push_back(f.at("tokens").get<std::vector<std::uint64_t>>());
  }
}

}  // namespace

std::string checkpoint_to_string(ModelParams& params) {
  const auto& vocab = params.embeddings.vocab();
  json j;
  j["format_version"] = kCheckpointVersion;
  j["variant"] = to_string(params.variant);
  j["dims"] = {{"embedding_dim", params.dims.embedding_dim},
               {"hidden", params.dims.hidden},
               {"mlp", params.dims.mlp}};
  j["vocab"] = {{"items", vocab.items.names()},
                {"entities", vocab.entities.names()},
                {"relations", vocab.relations.names()},
                {"user_fields", fields_to_json(vocab.user_fields, vocab.user_tokens)},
                {"item_fields", fields_to_json(vocab.item_fields, vocab.item_tokens)}};
  json ps = json::array();
  for (const auto* p : params.parameters()) {
    ps.push_back({{"name", p->name},
                  {"shape", {p->value.rows(), p->value.cols()}},
                  {"values", std::vector<double>(p->value.data().begin(), p->value.data().end())}});
  }
  j["parameters"] = std::move(ps);
  return j.dump();
}

ModelParams checkpoint_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw Error("unsupported checkpoint format_version " + std::to_string(version));
    }
    ModelDims dims;
    dims.embedding_dim = j.at("dims").at("embedding_dim").get<std::size_t>();
    dims.hidden = j.at("dims").at("hidden").get<std::size_t>();
    dims.mlp = j.at("dims").at("mlp").get<std::vector<std::size_t>>();
    ModelVocab vocab;
    const auto& v = j.at("vocab");
    vocab.items = graphs::Vocabulary(v.at("items").get<std::vector<std::string>>());
    vocab.entities = graphs::Vocabulary(v.at("entities").get<std::vector<std::string>>());
    vocab.relations = graphs::Vocabulary(v.at("relations").get<std::vector<std::string>>());
    fields_from_json(v.at("user_fields"), vocab.user_fields, vocab.user_tokens);
    fields_from_json(v.at("item_fields"), vocab.item_fields, vocab.item_tokens);
    ModelParams params(std::move(vocab), dims, variant_from_string(j.at("variant").get<std::string>()));

    std::map<std::string, const json*> stored;
    for (const auto& p : j.at("parameters")) stored[p.at("name").get<std::string>()] = &p;
    auto targets = params.parameters();
    if (stored.size() != targets.size()) {
      throw ShapeError("checkpoint holds " + std::to_string(stored.size()) + " parameters, model expects " +
                       std::to_string(targets.size()));
    }
    for (auto* p : targets) {
      const auto it = stored.find(p->name);
      if (it == stored.end()) throw ShapeError("checkpoint is missing parameter " + p->name);
      const auto shape = it->second->at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != p->value.rows() || shape[1] != p->value.cols()) {
        throw ShapeError("checkpoint parameter " + p->name + " has shape " + it->second->at("shape").dump() +
                         ", expected " + p->value.shape_string());
      }
      auto values = it->second->at("values").get<std::vector<double>>();
      p->value = Tensor(shape[0], shape[1], std::move(values));
    }
    return params;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, ModelParams& params) {
  auto out = detail::open_output(path);
  out << checkpoint_to_string(params) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_from_string(text);
}

}  // namespace mtbrn::model
