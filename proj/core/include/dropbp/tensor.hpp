#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dropbp {

using Shape = std::vector<std::size_t>;

// Dense row-major tensor of doubles. Shape dimensions are all positive and
// their product equals the element count.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);                      // zero-filled
  Tensor(Shape shape, std::vector<double> data);     // validates size and finiteness
  Tensor(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool empty() const { return data_.empty(); }

  // 2-D helpers; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> values() { return data_; }
  const double* ptr() const { return data_.data(); }
  double* ptr() { return data_.data(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  std::size_t bytes() const { return data_.size() * sizeof(double); }
  bool all_finite() const;
  // Throws NumericError mentioning `what` if any element is NaN or Inf.
  void ensure_finite(const std::string& what) const;

  double l2_norm() const;
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

}  // namespace dropbp
