#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmsparse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major f64 tensor. Copies share the underlying buffer; tape
// values are written once during the forward pass and treated as immutable
// afterwards, so sharing is safe. Use clone() when a private buffer is
// needed (optimizer state, stored parameters).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor vec(std::initializer_list<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double& at(std::size_t i) { return (*data_)[i]; }
  double at(std::size_t i) const { return (*data_)[i]; }

  // Same buffer, new shape (numel must match).
  Tensor reshaped(Shape s) const;
  Tensor clone() const;
  double item() const;  // scalar tensors only
  bool shares_buffer(const Tensor& other) const { return data_ == other.data_; }

  bool requires_grad = false;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
};

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

}  // namespace nmsparse
