#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "qmpnn/errors.hpp"

namespace qmpnn {

/// A hypercomplex scalar r + i·i + j·j + k·k with 64-bit components.
struct Quaternion {
  double r = 0.0;
  double i = 0.0;
  double j = 0.0;
  double k = 0.0;

  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

inline constexpr Quaternion qadd(const Quaternion& p, const Quaternion& q) {
  return {p.r + q.r, p.i + q.i, p.j + q.j, p.k + q.k};
}

inline constexpr Quaternion qscale(double lambda, const Quaternion& q) {
  return {lambda * q.r, lambda * q.i, lambda * q.j, lambda * q.k};
}

/// Hamilton product p ⊗ q, written as the left-multiplication matrix of p
/// applied to the component vector of q.
inline constexpr Quaternion hamilton(const Quaternion& p, const Quaternion& q) {
  return {
      p.r * q.r - p.i * q.i - p.j * q.j - p.k * q.k,
      p.i * q.r + p.r * q.i - p.k * q.j + p.j * q.k,
      p.j * q.r + p.k * q.i + p.r * q.j - p.i * q.k,
      p.k * q.r - p.j * q.i + p.i * q.j + p.r * q.k,
  };
}

inline constexpr Quaternion conjugate(const Quaternion& q) { return {q.r, -q.i, -q.j, -q.k}; }

inline double qnorm(const Quaternion& q) {
  return std::sqrt(q.r * q.r + q.i * q.i + q.j * q.j + q.k * q.k);
}

/// Sign pattern of the left-multiplication matrix. Entry (row, col) of the
/// 4x4 real form of a quaternion w is sign * component(w, source).
struct BlockEntry {
  int source;  // 0=r 1=i 2=j 3=k
  double sign;
};

inline constexpr std::array<std::array<BlockEntry, 4>, 4> kHamiltonPattern{{
    {{{0, 1.0}, {1, -1.0}, {2, -1.0}, {3, -1.0}}},
    {{{1, 1.0}, {0, 1.0}, {3, -1.0}, {2, 1.0}}},
    {{{2, 1.0}, {3, 1.0}, {0, 1.0}, {1, -1.0}}},
    {{{3, 1.0}, {2, -1.0}, {1, 1.0}, {0, 1.0}}},
}};

inline constexpr double component(const Quaternion& q, int c) {
  switch (c) {
    case 0: return q.r;
    case 1: return q.i;
    case 2: return q.j;
    default: return q.k;
  }
}

/// Matrix of quaternions stored as four real blocks W_r, W_i, W_j, W_k, each
/// rows × cols and row-major. The packed storage is the four blocks laid out
/// back to back, which is also the layout of a quaternion weight parameter.
class QuatMatrix {
 public:
  QuatMatrix() = default;
  QuatMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(4 * rows * cols, 0.0) {}

  static QuatMatrix from_packed(std::size_t rows, std::size_t cols, std::span<const double> packed) {
    if (packed.size() != 4 * rows * cols) throw ShapeError("QuatMatrix: packed size does not match 4*rows*cols");
    QuatMatrix m(rows, cols);
    std::copy(packed.begin(), packed.end(), m.data_.begin());
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t real_parameter_count() const { return data_.size(); }

  Quaternion at(std::size_t a, std::size_t b) const {
    const std::size_t off = a * cols_ + b;
    const std::size_t blk = rows_ * cols_;
    return {data_[off], data_[blk + off], data_[2 * blk + off], data_[3 * blk + off]};
  }

  void set(std::size_t a, std::size_t b, const Quaternion& q) {
    const std::size_t off = a * cols_ + b;
    const std::size_t blk = rows_ * cols_;
    data_[off] = q.r;
    data_[blk + off] = q.i;
    data_[2 * blk + off] = q.j;
    data_[3 * blk + off] = q.k;
  }

  /// Block c in {0,1,2,3} as a rows × cols row-major view.
  std::span<const double> block(int c) const {
    return std::span<const double>(data_).subspan(static_cast<std::size_t>(c) * rows_ * cols_, rows_ * cols_);
  }

  std::span<const double> packed() const { return data_; }
  std::span<double> packed() { return data_; }

  static QuatMatrix identity(std::size_t n) {
    QuatMatrix m(n, n);
    for (std::size_t a = 0; a < n; ++a) m.set(a, a, {1.0, 0.0, 0.0, 0.0});
    return m;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Dense real matrix (row-major) of shape 4·rows × 4·cols such that
/// multiplying it with a packed quaternion vector reproduces quat_matvec.
/// Packed vectors use the block layout [r_0..r_{n-1}, i_0.., j_0.., k_0..].
inline std::vector<double> to_block_matrix(const QuatMatrix& w) {
  const std::size_t rows = w.rows(), cols = w.cols();
  const std::size_t out_cols = 4 * cols;
  std::vector<double> m(16 * rows * cols, 0.0);
  for (int br = 0; br < 4; ++br) {
    for (int bc = 0; bc < 4; ++bc) {
      const BlockEntry e = kHamiltonPattern[br][bc];
      auto src = w.block(e.source);
      for (std::size_t a = 0; a < rows; ++a) {
        for (std::size_t b = 0; b < cols; ++b) {
          m[(br * rows + a) * out_cols + bc * cols + b] = e.sign * src[a * cols + b];
        }
      }
    }
  }
  return m;
}

inline std::vector<double> pack(std::span<const Quaternion> h) {
  const std::size_t n = h.size();
  std::vector<double> out(4 * n);
  for (std::size_t b = 0; b < n; ++b) {
    out[b] = h[b].r;
    out[n + b] = h[b].i;
    out[2 * n + b] = h[b].j;
    out[3 * n + b] = h[b].k;
  }
  return out;
}

inline std::vector<Quaternion> unpack(std::span<const double> packed) {
  if (packed.size() % 4 != 0) throw ShapeError("unpack: packed length not divisible by 4");
  const std::size_t n = packed.size() / 4;
  std::vector<Quaternion> out(n);
  for (std::size_t b = 0; b < n; ++b) out[b] = {packed[b], packed[n + b], packed[2 * n + b], packed[3 * n + b]};
  return out;
}

/// out[a] = Σ_b W[a,b] ⊗ h[b]
inline std::vector<Quaternion> quat_matvec(const QuatMatrix& w, std::span<const Quaternion> h) {
  if (h.size() != w.cols()) throw ShapeError("quat_matvec: vector length does not match matrix columns");
  std::vector<Quaternion> out(w.rows());
  for (std::size_t a = 0; a < w.rows(); ++a) {
    Quaternion acc;
    for (std::size_t b = 0; b < w.cols(); ++b) acc = qadd(acc, hamilton(w.at(a, b), h[b]));
    out[a] = acc;
  }
  return out;
}

}  // namespace qmpnn
