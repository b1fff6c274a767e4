#include "deskpilot/tensor.hpp"

#include <algorithm>

namespace deskpilot {

std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (std::any_of(shape_.begin(), shape_.end(), [](int d) { return d < 1; }))
    throw ShapeError("tensor: extents must be positive, got " + shape_string(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (std::any_of(shape_.begin(), shape_.end(), [](int d) { return d < 1; }))
    throw ShapeError("tensor: extents must be positive, got " + shape_string(shape_));
  if (data_.size() != shape_size(shape_))
    throw ShapeError("tensor: " + std::to_string(data_.size()) + " values for shape " + shape_string(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ShapeError("tensor: cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

}  // namespace deskpilot
