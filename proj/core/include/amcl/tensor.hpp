#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace amcl {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles with an optional gradient slot.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool has_grad() const noexcept { return grad_.has_value(); }
  /// Allocates a zeroed gradient slot if none exists.
  void enable_grad();
  void zero_grad();
  void drop_grad() { grad_.reset(); }
  std::span<double> grad();
  std::span<const double> grad() const;

  /// Same data, new shape. Element count must match.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;
  /// Throws NumericError naming `context` when any value is NaN/Inf.
  void require_finite(std::string_view context) const;

  /// FNV-1a over the raw bytes of shape and data; bit-exact identity check.
  std::uint64_t checksum() const noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

}  // namespace amcl
