#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "mtbrn/tensor.hpp"

namespace mtbrn::tensor {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid as long as the
// tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  // Gradient after Tape::backward; zeros if nothing flowed into this value.
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// Records operations in execution order. backward() walks the record once in
// reverse, so recording order is a valid topological order.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Detached input: no gradient flows into it.
  Var constant(Tensor value);
  // Input that receives a gradient readable through Var::grad().
  Var variable(Tensor value);
  // Reads the parameter's current value; backward() adds into its grad.
  Var param(Parameter& p);

  // Op outputs. `fn` may be empty for ops without inputs requiring grad.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, Backward fn);
  Var record(std::string_view op, Tensor value, std::span<const Var> inputs, Backward fn);

  void backward(Var loss);

  const Tensor& value(std::size_t index) const { return nodes_[index].value; }
  const Tensor& grad(std::size_t index) const;
  bool requires_grad(std::size_t index) const { return nodes_[index].requires_grad; }
  // Gradient buffer of an input, or nullptr if it does not require grad.
  Tensor* grad_sink(std::size_t index);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Hash of every piecewise-branch decision taken while recording (relu
  // signs, loss clamps). Two evaluations with equal signatures lie on the
  // same smooth piece of the function.
  std::uint64_t kink_signature() const { return kink_signature_; }
  void note_branch(std::uint64_t pattern_hash);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_;
  std::uint64_t kink_signature_ = 0xcbf29ce484222325ULL;
};

// ---------------------------------------------------------------------------
// Ops. Shapes must match exactly; nothing broadcasts.

Var matmul(Var a, Var b);
Var transpose(Var a);
// Same row-major data viewed as (rows x cols).
Var reshape(Var a, std::size_t rows, std::size_t cols);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
// (1 x c) -> (n x c)
Var repeat_rows(Var row, std::size_t n);
Var sigmoid(Var a);
Var tanh(Var a);
// Subgradient 0 at exactly 0.
Var relu(Var a);
// Over all elements of a row or column vector.
Var softmax(Var a);
Var sum(Var a);
Var mean(Var a);
// (n x c) -> (n x 1)
Var row_sum(Var a);
Var gather_rows(Var a, std::vector<std::size_t> rows);

// Segment ops over row ranges [offsets[s], offsets[s+1]) of an (n x c) input;
// offsets has one entry per segment plus a final n. Empty segments are
// allowed.
Var segment_softmax(Var logits, const std::vector<std::size_t>& offsets);
// Per segment: sum_i weights[i] * values.row(i). weights is (n x 1).
Var segment_weighted_sum(Var weights, Var values, const std::vector<std::size_t>& offsets);
// Per segment: mean of rows (zero row for an empty segment).
Var segment_mean(Var values, const std::vector<std::size_t>& offsets);
// Per segment: element-wise product of every row pair i < j, in (i, j)
// lexicographic order. `out_offsets` receives the output segmentation.
Var pairwise_products(Var values, const std::vector<std::size_t>& offsets, std::vector<std::size_t>& out_offsets);

inline constexpr std::size_t kNoRow = static_cast<std::size_t>(-1);

// Row r of the output is scales[r] * table.row(rows[r]), or zeros when
// rows[r] == kNoRow. Gradient is scattered into the touched table rows.
Var embedding_lookup(Tape& tape, Parameter& table, const std::vector<std::size_t>& rows,
                     const std::vector<double>& scales);

inline constexpr double kLogClamp = 1e-12;

// Mean binary cross-entropy of predictions (n x 1) in (0,1); logs clamp at
// kLogClamp.
Var bce_loss(Var predictions, const std::vector<double>& labels);

}  // namespace mtbrn::tensor
