#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cdvg {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major float tensor. Copies share storage (like a handle); use
// clone() for an independent buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor full(Shape shape, float value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(float value) { return Tensor(Shape{}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return storage_ ? storage_->size() : 0; }
  bool defined() const { return static_cast<bool>(storage_); }

  float* data() { return storage_->data(); }
  const float* data() const { return storage_->data(); }
  std::span<float> span() { return {storage_->data(), storage_->size()}; }
  std::span<const float> span() const { return {storage_->data(), storage_->size()}; }

  float& operator[](std::size_t i) { return (*storage_)[i]; }
  float operator[](std::size_t i) const { return (*storage_)[i]; }

  // Value of a single-element tensor.
  float item() const;

  Tensor reshape(Shape shape) const;
  Tensor clone() const;

  void fill(float value);
  // this += other (same element count).
  void add_(const Tensor& other);

  bool same_values(const Tensor& other) const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<float>> storage_;
};

}  // namespace cdvg
