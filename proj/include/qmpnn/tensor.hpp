#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qmpnn/errors.hpp"

namespace qmpnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t d = 0; d < s.size(); ++d) os << (d ? "," : "") << s[d];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. Every dimension is positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_))
      throw ShapeError("Tensor: data length " + std::to_string(data_.size()) + " does not match shape " + shape_string(shape_));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const {
    require_rank2();
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank2();
    return shape_[1];
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_shape() const {
    if (shape_.empty()) throw ShapeError("Tensor: shape must have at least one dimension");
    for (auto d : shape_)
      if (d == 0) throw ShapeError("Tensor: zero-sized dimension in shape " + shape_string(shape_));
  }
  void require_rank2() const {
    if (shape_.size() != 2) throw ShapeError("Tensor: expected rank-2 tensor, got " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

enum class Arithmetic { real, quaternion };

inline const char* to_string(Arithmetic a) { return a == Arithmetic::real ? "real" : "quaternion"; }

enum class MaskPhase { soft, hard };

/// Multiplicative mask over one parameter. `alive` is the current hard mask;
/// `values` are the live multipliers (soft reals during sparsification,
/// exactly `alive` once hardened).
struct Mask {
  std::vector<double> values;
  std::vector<std::uint8_t> alive;
  std::vector<double> grad;
  MaskPhase phase = MaskPhase::hard;

  static Mask ones(std::size_t n) {
    return Mask{std::vector<double>(n, 1.0), std::vector<std::uint8_t>(n, 1), std::vector<double>(n, 0.0),
                MaskPhase::hard};
  }
  std::size_t size() const { return values.size(); }
  std::size_t alive_count() const { return static_cast<std::size_t>(std::count(alive.begin(), alive.end(), 1)); }
};

/// Trainable tensor. Quaternion weights are stored packed as
/// [4, rows_q, cols_q] (blocks r, i, j, k); masks act on that flat array.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Arithmetic arithmetic = Arithmetic::real;
  bool decay = true;
  bool prunable = false;
  std::optional<Mask> mask;

  Parameter() = default;
  Parameter(std::string n, Tensor v, Arithmetic a, bool prunable_weight)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), arithmetic(a), prunable(prunable_weight) {}

  void zero_grad() {
    grad.fill(0.0);
    if (mask) std::fill(mask->grad.begin(), mask->grad.end(), 0.0);
  }
};

}  // namespace qmpnn
