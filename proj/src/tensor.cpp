#include "scanet/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace scanet {

int64_t shape_size(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int64_t d : shape_) {
    if (d <= 0) throw Error("tensor dimension must be positive, got shape " + shape_str(shape_));
  }
  data_.assign(static_cast<size_t>(shape_size(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (int64_t d : shape_) {
    if (d <= 0) throw Error("tensor dimension must be positive, got shape " + shape_str(shape_));
  }
  if (shape_size(shape_) != static_cast<int64_t>(data_.size())) {
    throw Error("tensor data length " + std::to_string(data_.size()) +
                " does not match shape " + shape_str(shape_));
  }
  if (checked_mode()) check_finite("tensor construction");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw Error("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::check_finite(const std::string& what) const {
  if (!checked_mode()) return;
  for (double v : data_) {
    if (!std::isfinite(v)) {
      throw Error("non-finite value in " + what);
    }
  }
}

}  // namespace scanet
