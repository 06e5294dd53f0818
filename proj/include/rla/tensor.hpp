#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rla {

// Rank-4 (N, C, H, W) extent. One-dimensional parameters such as BN scale
// are stored as (C, 1, 1, 1).
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  constexpr std::int64_t numel() const { return n * c * h * w; }
  constexpr std::int64_t plane() const { return h * w; }
  constexpr bool valid() const { return n > 0 && c > 0 && h > 0 && w > 0; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const;
};

// Dense row-major tensor with an optional gradient slot of the same shape.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor full(Shape shape, T value) { return Tensor(shape, value); }
  // i.i.d. normal entries.
  static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T(1));
  // i.i.d. uniform entries in [lo, hi).
  static Tensor uniform(Shape shape, std::mt19937_64& rng, T lo, T hi);

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[index(n, c, h, w)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[index(n, c, h, w)];
  }

  bool has_grad() const { return grad_.has_value(); }
  // Allocates a zero gradient on first use.
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();
  void drop_grad() { grad_.reset(); }

  void fill(T value);
  // Same data reinterpreted under a shape with equal element count.
  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool all_finite() const;

 private:
  std::size_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w);
  }

  Shape shape_{};
  std::vector<T> data_;
  std::optional<std::vector<T>> grad_;
};

// Largest |a - b| over all elements; shapes must agree.
template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// ||a - b||_2 / max(||b||_2, tiny).
template <typename T>
double relative_l2_error(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace rla
