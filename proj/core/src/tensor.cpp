#include "amcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "amcl/errors.hpp"

namespace amcl {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (std::find(shape_.begin(), shape_.end(), 0) != shape_.end())
    throw ConfigError("tensor extents must be positive, got " + shape_string(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (std::find(shape_.begin(), shape_.end(), 0) != shape_.end())
    throw ConfigError("tensor extents must be positive, got " + shape_string(shape_));
  if (shape_size(shape_) != data_.size())
    throw ConfigError("tensor shape " + shape_string(shape_) + " does not match " +
                      std::to_string(data_.size()) + " values");
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

void Tensor::enable_grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

std::span<double> Tensor::grad() {
  if (!grad_) throw StateError("tensor has no gradient slot");
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw StateError("tensor has no gradient slot");
  return *grad_;
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(std::string_view context) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i]))
      throw NumericError(std::string(context) + ": non-finite value " + std::to_string(data_[i]) +
                         " at flat index " + std::to_string(i) + " of tensor " + shape_string(shape_));
  }
}

std::uint64_t Tensor::checksum() const noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t e : shape_) {
    std::uint64_t v = e;
    mix(&v, sizeof v);
  }
  mix(data_.data(), data_.size() * sizeof(double));
  return h;
}

}  // namespace amcl
