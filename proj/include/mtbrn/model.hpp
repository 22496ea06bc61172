#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mtbrn/core.hpp"
#include "mtbrn/graphs.hpp"
#include "mtbrn/pathfinder.hpp"
#include "mtbrn/tape.hpp"

namespace mtbrn::model {

using tensor::Parameter;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

struct ModelDims {
  std::size_t embedding_dim = 4;
  std::size_t hidden = 8;
  std::vector<std::size_t> mlp{32, 16, 8};

  bool operator==(const ModelDims&) const = default;
};

enum class ModelVariant { full, cf_only, kg_only, no_fusion, avgpool_baseline, prodattn_baseline };

const char* to_string(ModelVariant variant);
ModelVariant variant_from_string(const std::string& text);
const std::vector<ModelVariant>& all_variants();
bool uses_paths(ModelVariant variant);

// Everything the embedding table has a row for.
struct ModelVocab {
  graphs::Vocabulary items;
  graphs::Vocabulary entities;
  graphs::Vocabulary relations;
  std::vector<core::FieldSpec> user_fields;
  std::vector<core::FieldSpec> item_fields;
  // Known tokens of each sparse field, ascending; empty for numerical fields.
  std::vector<std::vector<std::uint64_t>> user_tokens;
  std::vector<std::vector<std::uint64_t>> item_tokens;

  bool operator==(const ModelVocab&) const = default;
};

// Items are taken from targets, behaviors and path tokens; fields in order of
// first appearance.
ModelVocab build_vocab(const std::vector<core::Instance>& instances,
                       const std::vector<paths::NamedPathSet>& path_sets);

enum class FieldOwner { user, item };

// One Parameter of shape (rows, d). Row layout: items, item OOV, entities,
// entity OOV, relations, relation OOV, the similarity-score row, then per
// field either its sparse tokens plus an OOV row or a single numerical row.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(ModelVocab vocab, std::size_t dim);

  const ModelVocab& vocab() const { return vocab_; }
  std::size_t dim() const { return table_.value.cols(); }
  std::size_t rows() const { return table_.value.rows(); }
  Parameter& param() { return table_; }
  const Parameter& param() const { return table_; }

  std::size_t item_row(const std::string& name) const;
  std::size_t entity_row(const std::string& name) const;
  std::size_t relation_row(const std::string& name) const;
  std::size_t score_row() const { return score_row_; }
  std::size_t field_count(FieldOwner owner) const;
  // Row and scale of a feature; throws on a field the table does not know.
  std::pair<std::size_t, double> feature_row(FieldOwner owner, const core::FeatureValue& feature) const;

 private:
  ModelVocab vocab_;
  Parameter table_;
  std::size_t entity_offset_ = 0;
  std::size_t relation_offset_ = 0;
  std::size_t score_row_ = 0;
  std::vector<std::size_t> user_field_offsets_;
  std::vector<std::size_t> item_field_offsets_;
};

// Peephole LSTM cell, row-vector convention: x is (n x d), h and c (n x H).
struct LstmCell {
  Parameter W_xi, W_hi, W_ci, W_xf, W_hf, W_cf, W_xc, W_hc, W_xo, W_ho, W_co;
  Parameter b_i, b_f, b_c, b_o;

  LstmCell() = default;
  LstmCell(const std::string& prefix, std::size_t input, std::size_t hidden);
  std::vector<Parameter*> parameters();
  std::size_t hidden() const { return W_hi.value.rows(); }
};

struct BiLstmEncoder {
  LstmCell forward;
  LstmCell backward;

  BiLstmEncoder() = default;
  BiLstmEncoder(const std::string& prefix, std::size_t input, std::size_t hidden);
  std::vector<Parameter*> parameters();
};

struct AttentionParams {
  Parameter W;  // (2H x dim(x_v))

  AttentionParams() = default;
  AttentionParams(const std::string& name, std::size_t path_width, std::size_t target_width);
};

// Hidden ReLU layers then a single linear output unit.
struct Mlp {
  std::vector<Parameter> weights;
  std::vector<Parameter> biases;

  Mlp() = default;
  Mlp(std::size_t input, const std::vector<std::size_t>& hidden);
  std::vector<Parameter*> parameters();
};

class ModelParams {
 public:
  ModelParams() = default;
  // All values zero.
  ModelParams(ModelVocab vocab, ModelDims dims, ModelVariant variant);

  ModelDims dims;
  ModelVariant variant = ModelVariant::full;
  EmbeddingTable embeddings;
  BiLstmEncoder encoder_cf;
  BiLstmEncoder encoder_kg;
  AttentionParams attn_cf;
  AttentionParams attn_kg;
  AttentionParams attn_fu;
  Mlp mlp;

  // Stable order; names are unique.
  std::vector<Parameter*> parameters();
  std::size_t user_width() const;
  std::size_t target_width() const;
  std::size_t mlp_input_width() const;
};

bool is_bias(const Parameter& p);

// ---------------------------------------------------------------------------
// Encoded inputs: embedding rows and scales resolved once per instance.

struct EncodedSequence {
  std::vector<std::size_t> rows;
  std::vector<double> scales;
};

struct EncodedInstance {
  EncodedSequence user;    // one entry per user field
  EncodedSequence target;  // item id, then one entry per item field
  std::vector<std::size_t> behaviors;
  std::vector<EncodedSequence> cf_paths;
  std::vector<EncodedSequence> kg_paths;
  double label = 0.0;
};

EncodedSequence encode_features(const EmbeddingTable& table, FieldOwner owner,
                                const std::vector<core::FeatureValue>& features);
EncodedSequence encode_path(const EmbeddingTable& table, const paths::NamedPath& path);
EncodedInstance encode_instance(const EmbeddingTable& table, const core::Instance& instance,
                                const paths::NamedPathSet& path_set);

// ---------------------------------------------------------------------------
// Layers. Single-instance forms, each a thin wrapper over the batched kernels
// used by forward().

// (1 x fields*d), fields in declared order, absent fields as zero blocks.
Var embed_features(Tape& tape, EmbeddingTable& table, FieldOwner owner,
                   const std::vector<core::FeatureValue>& features);
// (L x d)
Var embed_path(Tape& tape, EmbeddingTable& table, const paths::NamedPath& path);
// (L x d) -> (1 x 2H): last forward state, then last backward state.
Var encode_path(Tape& tape, BiLstmEncoder& encoder, Var sequence);
// Rows of (P x 2H) inputs -> (P(P-1)/2 x 2H) pairwise products over both sets.
Var fuse_paths(Tape& tape, Var h_cf, Var h_kg);
// (P x 2H), (1 x D) -> (1 x 2H); zeros when P = 0.
Var activate_paths(Tape& tape, Var paths, Var target, AttentionParams& attn);
// Attention weights of activate_paths, (P x 1).
Var attention_weights(Tape& tape, Var paths, Var target, AttentionParams& attn);

// Batched Bi-LSTM over variable-length sequences; rows follow input order.
Var encode_sequences(Tape& tape, BiLstmEncoder& encoder, EmbeddingTable& table,
                     const std::vector<const EncodedSequence*>& sequences);

// (B x 1) click probabilities.
Var forward(Tape& tape, ModelParams& params, const std::vector<const EncodedInstance*>& batch);

double predict(ModelParams& params, const EncodedInstance& instance);
std::vector<double> predict_all(ModelParams& params, const std::vector<EncodedInstance>& instances,
                                std::size_t batch_size = 256);

// Mean binary cross-entropy with the log clamp.
using tensor::bce_loss;

// ---------------------------------------------------------------------------
// Checkpoint: JSON with format_version, variant, dims, vocabulary and every
// parameter as name, shape and row-major values. Doubles round-trip exactly.

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_string(ModelParams& params);
ModelParams checkpoint_from_string(const std::string& text);

}  // namespace mtbrn::model
