#include "mtbrn/tensor.hpp"

#include <cmath>

#include "mtbrn/error.hpp"

namespace mtbrn::tensor {

Tensor::Tensor(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string());
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

void Tensor::fill(double value) {
  for (auto& v : data_) v = value;
}

bool Tensor::all_finite() const {
  for (const auto v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::add_in_place(const Tensor& other) {
  if (!same_shape(other)) throw ShapeError("add_in_place: " + shape_string() + " vs " + other.shape_string());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

std::string Tensor::shape_string() const { return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]"; }

Parameter::Parameter(std::string name_, Tensor value_, bool sparse)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(value.rows(), value.cols()),
      sparse_rows(sparse),
      touched_rows(sparse ? value.rows() : 0, 0) {}

void Parameter::zero_grad() {
  grad.fill(0.0);
  if (sparse_rows) touched_rows.assign(value.rows(), 0);
}

}  // namespace mtbrn::tensor
