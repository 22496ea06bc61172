#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mtbrn::tensor {

// Dense row-major matrix of doubles. Every tensor is two-dimensional; a
// scalar is 1x1 and a vector is 1xn or nx1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor(1, 1, {value}); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double value);
  bool all_finite() const;
  // this += other, shapes must match.
  void add_in_place(const Tensor& other);

  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A trainable tensor with its accumulated gradient. Embedding tables set
// `sparse_rows`; lookups then record which rows received gradient so the
// optimizer can leave the rest untouched.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value, bool sparse_rows = false);

  std::string name;
  Tensor value;
  Tensor grad;
  bool sparse_rows = false;
  std::vector<std::uint8_t> touched_rows;

  void zero_grad();
  void mark_row(std::size_t r) { touched_rows[r] = 1; }
};

}  // namespace mtbrn::tensor
