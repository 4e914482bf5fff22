#include "nmsparse/tensor.hpp"

#include "nmsparse/serialize.hpp"

namespace nmsparse {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(shape_numel(shape_), fill)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (values.size() != shape_numel(shape_))
    throw ValidationError("tensor data length " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape_));
  data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vec(std::initializer_list<double> v) {
  return Tensor(Shape{v.size()}, std::vector<double>(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::reshaped(Shape s) const {
  if (shape_numel(s) != numel())
    throw ValidationError("reshape from " + shape_str(shape_) + " to " + shape_str(s));
  Tensor t = *this;
  t.shape_ = std::move(s);
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.requires_grad = requires_grad;
  if (data_) t.data_ = std::make_shared<std::vector<double>>(*data_);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ValidationError("item() on non-scalar tensor " + shape_str(shape_));
  return (*data_)[0];
}

}  // namespace nmsparse
