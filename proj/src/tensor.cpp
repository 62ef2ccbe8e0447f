#include "prsfda/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "prsfda/error.hpp"

namespace prsfda {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != product(shape_)) {
    throw Error(ErrorKind::kShape, "tensor data length " + std::to_string(data_.size()) +
                                       " does not match shape " + shape_string());
  }
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  std::size_t c = shape_.back();
  return c == 0 ? 0 : data_.size() / c;
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ',';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

LabelMap::LabelMap(std::size_t h, std::size_t w, std::vector<std::int32_t> v)
    : height(h), width(w), ids(std::move(v)) {
  if (ids.size() != h * w) {
    throw Error(ErrorKind::kShape, "label map length does not match " + std::to_string(h) + "x" +
                                       std::to_string(w));
  }
}

}  // namespace prsfda
