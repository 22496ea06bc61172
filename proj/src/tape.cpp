#include "mtbrn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtbrn/error.hpp"

namespace mtbrn::tensor {

const Tensor& Var::value() const { return tape_->value(index_); }
const Tensor& Var::grad() const { return tape_->grad(index_); }
bool Var::requires_grad() const { return tape_->requires_grad(index_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, false, false, {}, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back({std::move(value), {}, grad_enabled_, false, {}, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back({p.value, {}, grad_enabled_, false, {}, grad_enabled_ ? &p : nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, Backward fn) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(std::string_view op, Tensor value, std::span<const Var> inputs, Backward fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value " + value.shape_string());
  }
  bool needs_grad = false;
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (in.tape() != this) throw Error(std::string(op) + ": operand recorded on a different tape");
      needs_grad = needs_grad || nodes_[in.index()].requires_grad;
    }
  }
  nodes_.push_back({std::move(value), {}, needs_grad, false, needs_grad ? std::move(fn) : Backward{}, nullptr});
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::grad(std::size_t index) const {
  auto& node = const_cast<Node&>(nodes_[index]);
  if (!node.has_grad) {
    node.grad = Tensor(node.value.rows(), node.value.cols());
    node.has_grad = true;
  }
  return node.grad;
}

Tensor* Tape::grad_sink(std::size_t index) {
  auto& node = nodes_[index];
  if (!node.requires_grad) return nullptr;
  if (!node.has_grad) {
    node.grad = Tensor(node.value.rows(), node.value.cols());
    node.has_grad = true;
  }
  return &node.grad;
}

void Tape::note_branch(std::uint64_t pattern_hash) {
  kink_signature_ ^= pattern_hash + 0x9e3779b97f4a7c15ULL + (kink_signature_ << 6) + (kink_signature_ >> 2);
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("backward: loss was recorded on a different tape");
  auto& root = nodes_[loss.index()];
  if (!root.requires_grad) throw Error("backward on a detached tensor");
  if (root.value.size() != 1) throw ShapeError("backward: loss must be scalar, got " + root.value.shape_string());
  grad_sink(loss.index())->fill(1.0);
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.has_grad || !node.requires_grad) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param != nullptr) node.param->grad.add_in_place(node.grad);
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                                         b.shape_string());
}

Tape& tape_of(const char* op, Var a) {
  if (a.tape() == nullptr) throw Error(std::string(op) + ": operand is not recorded on a tape");
  return *a.tape();
}

std::uint64_t hash_bits(const std::vector<bool>& bits) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const bool b : bits) {
    h ^= b ? 0x31 : 0x30;
    h *= 1099511628211ULL;
  }
  h ^= bits.size();
  h *= 1099511628211ULL;
  return h;
}

void check_offsets(const char* op, const std::vector<std::size_t>& offsets, std::size_t rows) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != rows) {
    throw ShapeError(std::string(op) + ": offsets must start at 0 and end at " + std::to_string(rows));
  }
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    if (offsets[s] > offsets[s + 1]) throw ShapeError(std::string(op) + ": offsets must be non-decreasing");
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) {
    throw ShapeError("matmul: shape mismatch " + x.shape_string() + " vs " + y.shape_string());
  }
  const std::size_t n = x.rows();
  const std::size_t k = x.cols();
  const std::size_t m = y.cols();
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x(i, p);
      const double* yrow = y.row(p).data();
      for (std::size_t j = 0; j < m; ++j) orow[j] += xv * yrow[j];
    }
  }
  const auto ia = a.index();
  const auto ib = b.index();
  return tape_of("matmul", a).record("matmul", std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    if (Tensor* gx = t.grad_sink(ia)) {
      // gx += g * y^T
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* grow = g.row(i).data();
          const double* yrow = y.row(p).data();
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * yrow[j];
          (*gx)(i, p) += acc;
        }
      }
    }
    if (Tensor* gy = t.grad_sink(ib)) {
      // gy += x^T * g
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x(i, p);
          double* gyrow = gy->row(p).data();
          for (std::size_t j = 0; j < m; ++j) gyrow[j] += xv * grow[j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.cols(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
  }
  const auto ia = a.index();
  return tape_of("transpose", a).record("transpose", std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) (*gx)(j, i) += g(i, j);
    }
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& x = a.value();
  if (rows * cols != x.size()) {
    throw ShapeError("reshape: cannot view " + x.shape_string() + " as [" + std::to_string(rows) + "x" +
                     std::to_string(cols) + "]");
  }
  Tensor out(rows, cols, std::vector<double>(x.data().begin(), x.data().end()));
  const auto ia = a.index();
  return tape_of("reshape", a).record("reshape", std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(ia);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Var add(Var a, Var b) {
  require_same("add", a.value(), b.value());
  Tensor out = a.value();
  out.add_in_place(b.value());
  const auto ia = a.index();
  const auto ib = b.index();
  return tape_of("add", a).record("add", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(ia)) gx->add_in_place(g);
    if (Tensor* gy = t.grad_sink(ib)) gy->add_in_place(g);
  });
}

Var sub(Var a, Var b) {
  require_same("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  const auto ia = a.index();
  const auto ib = b.index();
  return tape_of("sub", a).record("sub", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(ia)) gx->add_in_place(g);
    if (Tensor* gy = t.grad_sink(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gy)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  const auto ia = a.index();
  const auto ib = b.index();
  return tape_of("mul", a).record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    if (Tensor* gx = t.grad_sink(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i];
    }
    if (Tensor* gy = t.grad_sink(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gy)[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  const auto ia = a.index();
  return tape_of("scale", a).record("scale", std::move(out), {a}, [ia, factor](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(ia);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += factor * g[i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) {
      throw ShapeError("concat_cols: row mismatch " + parts.front().value().shape_string() + " vs " +
                       p.value().shape_string());
    }
    total += p.cols();
  }
  Tensor out(n, total);
  std::vector<std::size_t> indices;
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& x = p.value();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(x.row(i).begin(), x.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += x.cols();
    indices.push_back(p.index());
    widths.push_back(x.cols());
  }
  return tape_of("concat_cols", parts.front())
      .record("concat_cols", std::move(out), parts, [indices, widths, n](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < indices.size(); ++k) {
          if (Tensor* gx = t.grad_sink(indices[k])) {
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t j = 0; j < widths[k]; ++j) (*gx)(i, j) += g(i, offset + j);
            }
          }
          offset += widths[k];
        }
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw ShapeError("concat_rows: column mismatch " + parts.front().value().shape_string() + " vs " +
                       p.value().shape_string());
    }
    total += p.rows();
  }
  Tensor out(total, c);
  std::vector<std::size_t> indices;
  std::vector<std::size_t> heights;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& x = p.value();
    std::copy(x.data().begin(), x.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset * c));
    offset += x.rows();
    indices.push_back(p.index());
    heights.push_back(x.rows());
  }
  return tape_of("concat_rows", parts.front())
      .record("concat_rows", std::move(out), parts, [indices, heights, c](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < indices.size(); ++k) {
          if (Tensor* gx = t.grad_sink(indices[k])) {
            for (std::size_t i = 0; i < heights[k] * c; ++i) (*gx)[i] += g[offset * c + i];
          }
          offset += heights[k];
        }
      });
}

Var repeat_rows(Var row, std::size_t n) {
  const Tensor& x = row.value();
  if (x.rows() != 1) throw ShapeError("repeat_rows: expected a single row, got " + x.shape_string());
  Tensor out(n, x.cols());
  for (std::size_t i = 0; i < n; ++i) std::copy(x.data().begin(), x.data().end(), out.row(i).begin());
  const auto ia = row.index();
  return tape_of("repeat_rows", row).record("repeat_rows", std::move(out), {row}, [ia](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) (*gx)[j] += g(i, j);
    }
  });
}

Var sigmoid(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Split by sign so exp never overflows.
    out[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
  }
  const auto ia = a.index();
  auto& tape = tape_of("sigmoid", a);
  const std::size_t self = tape.size();
  return tape.record("sigmoid", std::move(out), {a}, [ia, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor* gx = t.grad_sink(ia);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  const auto ia = a.index();
  auto& tape = tape_of("tanh", a);
  const std::size_t self = tape.size();
  return tape.record("tanh", std::move(out), {a}, [ia, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor* gx = t.grad_sink(ia);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var relu(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  std::vector<bool> pattern(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    pattern[i] = x[i] > 0.0;
    out[i] = pattern[i] ? x[i] : 0.0;
  }
  auto& tape = tape_of("relu", a);
  tape.note_branch(hash_bits(pattern));
  const auto ia = a.index();
  return tape.record("relu", std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    Tensor* gx = t.grad_sink(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) (*gx)[i] += g[i];
    }
  });
}

Var softmax(Var a) {
  const Tensor& x = a.value();
  if (x.rows() != 1 && x.cols() != 1) throw ShapeError("softmax: expected a vector, got " + x.shape_string());
  Tensor out(x.rows(), x.cols());
  if (x.size() > 0) {
    const double peak = *std::max_element(x.data().begin(), x.data().end());
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      out[i] = std::exp(x[i] - peak);
      total += out[i];
    }
    for (auto& v : out.data()) v /= total;
  }
  const auto ia = a.index();
  auto& tape = tape_of("softmax", a);
  const std::size_t self = tape.size();
  return tape.record("softmax", std::move(out), {a}, [ia, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor* gx = t.grad_sink(ia);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += y[i] * (g[i] - dot);
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (const auto v : a.value().data()) total += v;
  const auto ia = a.index();
  return tape_of("sum", a).record("sum", Tensor::scalar(total), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(ia);
    for (auto& v : gx->data()) v += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  double total = 0.0;
  for (const auto v : a.value().data()) total += v;
  const auto ia = a.index();
  return tape_of("mean", a).record("mean", Tensor::scalar(total / static_cast<double>(n)), {a},
                                   [ia, n](Tape& t, const Tensor& g) {
                                     Tensor* gx = t.grad_sink(ia);
                                     const double share = g[0] / static_cast<double>(n);
                                     for (auto& v : gx->data()) v += share;
                                   });
}

Var row_sum(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double total = 0.0;
    for (const auto v : x.row(i)) total += v;
    out[i] = total;
  }
  const auto ia = a.index();
  return tape_of("row_sum", a).record("row_sum", std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(ia);
    for (std::size_t i = 0; i < gx->rows(); ++i) {
      for (auto& v : gx->row(i)) v += g[i];
    }
  });
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  const Tensor& x = a.value();
  Tensor out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " + x.shape_string());
    }
    std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
  }
  const auto ia = a.index();
  return tape_of("gather_rows", a)
      .record("gather_rows", std::move(out), {a}, [ia, rows = std::move(rows)](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_sink(ia);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          auto dst = gx->row(rows[i]);
          const auto src = g.row(i);
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
      });
}

Var segment_softmax(Var logits, const std::vector<std::size_t>& offsets) {
  const Tensor& x = logits.value();
  if (x.cols() != 1) throw ShapeError("segment_softmax: expected a column, got " + x.shape_string());
  check_offsets("segment_softmax", offsets, x.rows());
  Tensor out(x.rows(), 1);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t b = offsets[s];
    const std::size_t e = offsets[s + 1];
    if (b == e) continue;
    double peak = x[b];
    for (std::size_t i = b + 1; i < e; ++i) peak = std::max(peak, x[i]);
    double total = 0.0;
    for (std::size_t i = b; i < e; ++i) {
      out[i] = std::exp(x[i] - peak);
      total += out[i];
    }
    for (std::size_t i = b; i < e; ++i) out[i] /= total;
  }
  const auto ia = logits.index();
  auto& tape = tape_of("segment_softmax", logits);
  const std::size_t self = tape.size();
  return tape.record("segment_softmax", std::move(out), {logits}, [ia, self, offsets](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor* gx = t.grad_sink(ia);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      double dot = 0.0;
      for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) dot += g[i] * y[i];
      for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) (*gx)[i] += y[i] * (g[i] - dot);
    }
  });
}

Var segment_weighted_sum(Var weights, Var values, const std::vector<std::size_t>& offsets) {
  const Tensor& w = weights.value();
  const Tensor& v = values.value();
  if (w.cols() != 1 || w.rows() != v.rows()) {
    throw ShapeError("segment_weighted_sum: weights " + w.shape_string() + " do not match values " +
                     v.shape_string());
  }
  check_offsets("segment_weighted_sum", offsets, v.rows());
  const std::size_t segments = offsets.size() - 1;
  const std::size_t c = v.cols();
  Tensor out(segments, c);
  for (std::size_t s = 0; s < segments; ++s) {
    auto dst = out.row(s);
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) {
      const auto src = v.row(i);
      for (std::size_t j = 0; j < c; ++j) dst[j] += w[i] * src[j];
    }
  }
  const auto iw = weights.index();
  const auto iv = values.index();
  return tape_of("segment_weighted_sum", weights)
      .record("segment_weighted_sum", std::move(out), {weights, values},
              [iw, iv, offsets, c](Tape& t, const Tensor& g) {
                const Tensor& w = t.value(iw);
                const Tensor& v = t.value(iv);
                Tensor* gw = t.grad_sink(iw);
                Tensor* gv = t.grad_sink(iv);
                for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
                  const auto grow = g.row(s);
                  for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) {
                    if (gw != nullptr) {
                      double dot = 0.0;
                      const auto vrow = v.row(i);
                      for (std::size_t j = 0; j < c; ++j) dot += grow[j] * vrow[j];
                      (*gw)[i] += dot;
                    }
                    if (gv != nullptr) {
                      auto dst = gv->row(i);
                      for (std::size_t j = 0; j < c; ++j) dst[j] += w[i] * grow[j];
                    }
                  }
                }
              });
}

Var segment_mean(Var values, const std::vector<std::size_t>& offsets) {
  const Tensor& v = values.value();
  check_offsets("segment_mean", offsets, v.rows());
  const std::size_t segments = offsets.size() - 1;
  const std::size_t c = v.cols();
  Tensor out(segments, c);
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t n = offsets[s + 1] - offsets[s];
    if (n == 0) continue;
    auto dst = out.row(s);
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) {
      const auto src = v.row(i);
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    for (auto& x : dst) x /= static_cast<double>(n);
  }
  const auto iv = values.index();
  return tape_of("segment_mean", values)
      .record("segment_mean", std::move(out), {values}, [iv, offsets, c](Tape& t, const Tensor& g) {
        Tensor* gv = t.grad_sink(iv);
        for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
          const std::size_t n = offsets[s + 1] - offsets[s];
          for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) {
            auto dst = gv->row(i);
            for (std::size_t j = 0; j < c; ++j) dst[j] += g(s, j) / static_cast<double>(n);
          }
        }
      });
}

Var pairwise_products(Var values, const std::vector<std::size_t>& offsets, std::vector<std::size_t>& out_offsets) {
  const Tensor& v = values.value();
  check_offsets("pairwise_products", offsets, v.rows());
  const std::size_t c = v.cols();
  out_offsets.assign(1, 0);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t n = offsets[s + 1] - offsets[s];
    out_offsets.push_back(out_offsets.back() + (n < 2 ? 0 : n * (n - 1) / 2));
  }
  // (i, j) source rows of every output row.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(out_offsets.back());
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) {
      for (std::size_t j = i + 1; j < offsets[s + 1]; ++j) pairs.emplace_back(i, j);
    }
  }
  Tensor out(pairs.size(), c);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    const auto a = v.row(pairs[r].first);
    const auto b = v.row(pairs[r].second);
    auto dst = out.row(r);
    for (std::size_t j = 0; j < c; ++j) dst[j] = a[j] * b[j];
  }
  const auto iv = values.index();
  return tape_of("pairwise_products", values)
      .record("pairwise_products", std::move(out), {values},
              [iv, c, pairs = std::move(pairs)](Tape& t, const Tensor& g) {
                const Tensor& v = t.value(iv);
                Tensor* gv = t.grad_sink(iv);
                for (std::size_t r = 0; r < pairs.size(); ++r) {
                  const auto [i, j] = pairs[r];
                  const auto grow = g.row(r);
                  const auto a = v.row(i);
                  const auto b = v.row(j);
                  auto ga = gv->row(i);
                  auto gb = gv->row(j);
                  for (std::size_t k = 0; k < c; ++k) {
                    ga[k] += grow[k] * b[k];
                    gb[k] += grow[k] * a[k];
                  }
                }
              });
}

Var embedding_lookup(Tape& tape, Parameter& table, const std::vector<std::size_t>& rows,
                     const std::vector<double>& scales) {
  if (rows.size() != scales.size()) throw ShapeError("embedding_lookup: rows and scales differ in length");
  const Tensor& w = table.value;
  const std::size_t d = w.cols();
  Tensor out(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] == kNoRow) continue;
    if (rows[i] >= w.rows()) {
      throw ShapeError("embedding_lookup: row " + std::to_string(rows[i]) + " out of range for " + table.name +
                       " " + w.shape_string());
    }
    const auto src = w.row(rows[i]);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] = scales[i] * src[j];
  }
  Tape::Backward fn;
  if (tape.grad_enabled()) {
    fn = [&table, rows, scales, d](Tape&, const Tensor& g) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] == kNoRow) continue;
        auto dst = table.grad.row(rows[i]);
        const auto src = g.row(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] += scales[i] * src[j];
        if (table.sparse_rows) table.mark_row(rows[i]);
      }
    };
  }
  // The table itself is not a node; an anchor input makes the output require
  // grad so the scatter above runs.
  if (!tape.grad_enabled()) return tape.record("embedding_lookup", std::move(out), std::span<const Var>{}, {});
  const Var anchor = tape.variable(Tensor(0, 0));
  return tape.record("embedding_lookup", std::move(out), {anchor}, std::move(fn));
}

Var bce_loss(Var predictions, const std::vector<double>& labels) {
  const Tensor& p = predictions.value();
  if (p.cols() != 1 || p.rows() != labels.size() || p.rows() == 0) {
    throw ShapeError("bce_loss: predictions " + p.shape_string() + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  std::vector<bool> clamps(2 * labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = labels[i];
    clamps[2 * i] = p[i] <= kLogClamp;
    clamps[2 * i + 1] = 1.0 - p[i] <= kLogClamp;
    total += y * std::log(std::max(p[i], kLogClamp)) + (1.0 - y) * std::log(std::max(1.0 - p[i], kLogClamp));
  }
  auto& tape = tape_of("bce_loss", predictions);
  tape.note_branch(hash_bits(clamps));
  const auto ip = predictions.index();
  return tape.record("bce_loss", Tensor::scalar(-total / n), {predictions}, [ip, labels, n](Tape& t, const Tensor& g) {
    const Tensor& p = t.value(ip);
    Tensor* gp = t.grad_sink(ip);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double y = labels[i];
      double d = 0.0;
      if (p[i] > kLogClamp) d -= y / p[i];
      if (1.0 - p[i] > kLogClamp) d += (1.0 - y) / (1.0 - p[i]);
      (*gp)[i] += g[0] * d / n;
    }
  });
}

}  // namespace mtbrn::tensor
