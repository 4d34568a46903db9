#include "cdvg/core/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cdvg/simd/kernels.hpp"

namespace cdvg {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)),
      storage_(std::make_shared<std::vector<float>>(cdvg::numel(shape_), fill)) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), storage_(std::make_shared<std::vector<float>>(std::move(values))) {
  if (storage_->size() != cdvg::numel(shape_)) {
    throw std::invalid_argument("tensor data size " + std::to_string(storage_->size()) +
                                " does not match shape " + to_string(shape_));
  }
}

float Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() on tensor of shape " + to_string(shape_));
  return (*storage_)[0];
}

Tensor Tensor::reshape(Shape shape) const {
  if (cdvg::numel(shape) != numel()) {
    throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

Tensor Tensor::clone() const {
  Tensor out;
  out.shape_ = shape_;
  if (storage_) out.storage_ = std::make_shared<std::vector<float>>(*storage_);
  return out;
}

void Tensor::fill(float value) { std::fill(storage_->begin(), storage_->end(), value); }

void Tensor::add_(const Tensor& other) {
  if (other.numel() != numel()) {
    throw std::invalid_argument("add_: size mismatch " + to_string(shape_) + " vs " +
                                to_string(other.shape_));
  }
  simd::add(numel(), data(), other.data(), data());
}

bool Tensor::same_values(const Tensor& other) const {
  return shape_ == other.shape_ && numel() == other.numel() &&
         (numel() == 0 || std::memcmp(data(), other.data(), numel() * sizeof(float)) == 0);
}

}  // namespace cdvg
