#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qmpnn/csr.hpp"
#include "qmpnn/quaternion.hpp"
#include "qmpnn/tape.hpp"

// Differentiable primitives. Every op reads its inputs from the tape, records
// one node, and captures only node ids (plus pointers to structures such as
// a Csr, which must outlive the tape).

namespace qmpnn::ops {

namespace detail {

inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("ops: operands recorded on different tapes");
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

/// Sum whose result does not depend on the order of `terms`: values are
/// sorted before accumulation. Two-term sums are already order-free.
inline double ordered_sum(std::span<double> terms) {
  if (terms.size() <= 2) {
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
  }
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

template <class F>
Var unary(Var a, F&& f, std::function<double(double x, double y)> dfdx) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t e = 0; e < x.size(); ++e) y[e] = f(x[e]);
  const std::size_t ai = a.id;
  return t.record(std::move(y), t.requires_grad(ai), [ai, dfdx = std::move(dfdx)](Tape& tp, std::size_t self) {
    const Tensor& x = tp.value(ai);
    const Tensor& y = tp.value(self);
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(ai);
    for (std::size_t e = 0; e < g.size(); ++e) gx[e] += g[e] * dfdx(x[e], y[e]);
  });
}

}  // namespace detail

/// C = A·B. Zero entries of A are skipped, which makes sparse bag-of-words
/// inputs cheap without changing the result for finite B.
inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
    throw ShapeError("matmul: incompatible shapes " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &C(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A(i, p);
      if (av == 0.0) continue;
      const double* brow = &B(p, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  const std::size_t ai = a.id, bi = b.id;
  const bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  return t.record(std::move(C), rg, [ai, bi, m, k, n](Tape& tp, std::size_t self) {
    const Tensor& A = tp.value(ai);
    const Tensor& B = tp.value(bi);
    const Tensor& G = tp.grad(self);
    if (tp.requires_grad(ai)) {
      Tensor& GA = tp.grad(ai);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G(i, j) * B(p, j);
          GA(i, p) += s;
        }
    }
    if (tp.requires_grad(bi)) {
      Tensor& GB = tp.grad(bi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A(i, p);
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) GB(p, j) += av * G(i, j);
        }
    }
  });
}

/// Elementwise a + b; b may also be a [1 × cols] row broadcast over rows of a.
inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool broadcast = A.shape() != B.shape();
  if (broadcast && !(A.rank() == 2 && B.rank() == 2 && B.rows() == 1 && B.cols() == A.cols()))
    throw ShapeError("add: shape mismatch " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  Tensor C = A;
  if (broadcast) {
    const std::size_t n = A.cols();
    for (std::size_t e = 0; e < C.size(); ++e) C[e] += B[e % n];
  } else {
    for (std::size_t e = 0; e < C.size(); ++e) C[e] += B[e];
  }
  const std::size_t ai = a.id, bi = b.id;
  const bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  return t.record(std::move(C), rg, [ai, bi, broadcast](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad(self);
    if (tp.requires_grad(ai)) {
      Tensor& GA = tp.grad(ai);
      for (std::size_t e = 0; e < G.size(); ++e) GA[e] += G[e];
    }
    if (tp.requires_grad(bi)) {
      Tensor& GB = tp.grad(bi);
      if (broadcast) {
        const std::size_t n = GB.size();
        for (std::size_t e = 0; e < G.size(); ++e) GB[e % n] += G[e];
      } else {
        for (std::size_t e = 0; e < G.size(); ++e) GB[e] += G[e];
      }
    }
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require_same_shape(A, B, "mul");
  Tensor C(A.shape());
  for (std::size_t e = 0; e < C.size(); ++e) C[e] = A[e] * B[e];
  const std::size_t ai = a.id, bi = b.id;
  const bool rg = t.requires_grad(ai) || t.requires_grad(bi);
  return t.record(std::move(C), rg, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad(self);
    const Tensor& A = tp.value(ai);
    const Tensor& B = tp.value(bi);
    if (tp.requires_grad(ai)) {
      Tensor& GA = tp.grad(ai);
      for (std::size_t e = 0; e < G.size(); ++e) GA[e] += G[e] * B[e];
    }
    if (tp.requires_grad(bi)) {
      Tensor& GB = tp.grad(bi);
      for (std::size_t e = 0; e < G.size(); ++e) GB[e] += G[e] * A[e];
    }
  });
}

inline Var scale(Var a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var relu(Var a) {
  // written so that NaN passes through instead of being clamped to 0
  return detail::unary(a, [](double x) { return x <= 0.0 ? 0.0 : x; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(Var a, double slope = 0.2) {
  return detail::unary(a, [slope](double x) { return x <= 0.0 ? slope * x : x; },
                       [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double z = std::exp(x);
        return z / (1.0 + z);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// Sum of all entries as a [1 × 1] scalar.
inline Var sum(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ai = a.id;
  return t.record(Tensor::scalar(s), t.requires_grad(ai), [ai](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    for (double& v : tp.grad(ai).data()) v += g;
  });
}

/// [n × f] → [n × 1] row sums.
inline Var row_sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const std::size_t n = A.rows(), f = A.cols();
  Tensor out = Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < f; ++j) s += A(i, j);
    out[i] = s;
  }
  const std::size_t ai = a.id;
  return t.record(std::move(out), t.requires_grad(ai), [ai, n, f](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad(self);
    Tensor& GA = tp.grad(ai);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f; ++j) GA(i, j) += G[i];
  });
}

/// Row-wise softmax with per-row max subtraction.
inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const std::size_t n = A.rows(), f = A.cols();
  Tensor Y = Tensor::matrix(n, f);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < f; ++j) mx = std::max(mx, A(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < f; ++j) s += (Y(i, j) = std::exp(A(i, j) - mx));
    for (std::size_t j = 0; j < f; ++j) Y(i, j) /= s;
  }
  const std::size_t ai = a.id;
  return t.record(std::move(Y), t.requires_grad(ai), [ai, n, f](Tape& tp, std::size_t self) {
    const Tensor& Y = tp.value(self);
    const Tensor& G = tp.grad(self);
    Tensor& GA = tp.grad(ai);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < f; ++j) dot += G(i, j) * Y(i, j);
      for (std::size_t j = 0; j < f; ++j) GA(i, j) += Y(i, j) * (G(i, j) - dot);
    }
  });
}

inline Var log_softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const std::size_t n = A.rows(), f = A.cols();
  Tensor Y = Tensor::matrix(n, f);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < f; ++j) mx = std::max(mx, A(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < f; ++j) s += std::exp(A(i, j) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < f; ++j) Y(i, j) = A(i, j) - lse;
  }
  const std::size_t ai = a.id;
  return t.record(std::move(Y), t.requires_grad(ai), [ai, n, f](Tape& tp, std::size_t self) {
    const Tensor& Y = tp.value(self);
    const Tensor& G = tp.grad(self);
    Tensor& GA = tp.grad(ai);
    for (std::size_t i = 0; i < n; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < f; ++j) gs += G(i, j);
      for (std::size_t j = 0; j < f; ++j) GA(i, j) += G(i, j) - std::exp(Y(i, j)) * gs;
    }
  });
}

/// Mean negative log-likelihood of `labels[r]` over the listed rows of a
/// log-probability matrix.
inline Var nll_loss(Var logp, std::span<const int> labels, std::span<const std::size_t> rows) {
  Tape& t = *logp.tape;
  const Tensor& L = logp.value();
  if (rows.empty()) throw ShapeError("nll_loss: no rows selected");
  const std::size_t c = L.cols();
  double s = 0.0;
  for (std::size_t r : rows) {
    const int y = labels[r];
    if (r >= L.rows() || y < 0 || static_cast<std::size_t>(y) >= c) throw IndexError("nll_loss: label out of range");
    s -= L(r, static_cast<std::size_t>(y));
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  std::vector<int> yv;
  yv.reserve(rv.size());
  for (std::size_t r : rv) yv.push_back(labels[r]);
  const std::size_t li = logp.id;
  return t.record(Tensor::scalar(s * inv), t.requires_grad(li),
                  [li, rv = std::move(rv), yv = std::move(yv), inv](Tape& tp, std::size_t self) {
                    const double g = tp.grad(self)[0];
                    Tensor& GL = tp.grad(li);
                    for (std::size_t q = 0; q < rv.size(); ++q) GL(rv[q], static_cast<std::size_t>(yv[q])) -= g * inv;
                  });
}

/// Mean binary cross-entropy on logits, computed as
/// max(x,0) − x·t + log(1 + exp(−|x|)).
inline Var bce_with_logits(Var logits, std::span<const double> targets) {
  Tape& t = *logits.tape;
  const Tensor& X = logits.value();
  if (X.size() != targets.size()) throw ShapeError("bce_with_logits: target count mismatch");
  double s = 0.0;
  for (std::size_t e = 0; e < X.size(); ++e) {
    const double x = X[e];
    s += std::max(x, 0.0) - x * targets[e] + std::log1p(std::exp(-std::abs(x)));
  }
  const double inv = 1.0 / static_cast<double>(X.size());
  std::vector<double> tv(targets.begin(), targets.end());
  const std::size_t xi = logits.id;
  return t.record(Tensor::scalar(s * inv), t.requires_grad(xi), [xi, tv = std::move(tv), inv](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    const Tensor& X = tp.value(xi);
    Tensor& GX = tp.grad(xi);
    for (std::size_t e = 0; e < X.size(); ++e) {
      const double x = X[e];
      const double p = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      GX[e] += g * inv * (p - tv[e]);
    }
  });
}

/// Horizontal concatenation of matrices with equal row counts.
inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  Tape& t = *parts.front().tape;
  const std::size_t n = parts.front().value().rows();
  std::size_t total = 0;
  bool rg = false;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    detail::require_same_tape(parts.front(), p);
    if (p.value().rows() != n) throw ShapeError("concat_cols: row count mismatch");
    widths.push_back(p.value().cols());
    ids.push_back(p.id);
    total += p.value().cols();
    rg = rg || t.requires_grad(p.id);
  }
  Tensor out = Tensor::matrix(n, total);
  std::size_t off = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const Tensor& P = parts[q].value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[q]; ++j) out(i, off + j) = P(i, j);
    off += widths[q];
  }
  return t.record(std::move(out), rg, [ids, widths, n](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad(self);
    std::size_t off = 0;
    for (std::size_t q = 0; q < ids.size(); ++q) {
      if (tp.requires_grad(ids[q])) {
        Tensor& GP = tp.grad(ids[q]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[q]; ++j) GP(i, j) += G(i, off + j);
      }
      off += widths[q];
    }
  });
}

/// Per-segment mean of rows: boundaries = [0, b1, ..., n] partitions the rows.
inline Var mean_pool(Var a, std::span<const std::size_t> boundaries) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  if (boundaries.size() < 2 || boundaries.front() != 0 || boundaries.back() != A.rows())
    throw ShapeError("mean_pool: boundaries must partition the rows");
  const std::size_t g = boundaries.size() - 1, f = A.cols();
  Tensor out = Tensor::matrix(g, f);
  for (std::size_t s = 0; s < g; ++s) {
    const std::size_t lo = boundaries[s], hi = boundaries[s + 1];
    if (hi <= lo) throw ShapeError("mean_pool: empty segment " + std::to_string(s));
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t j = 0; j < f; ++j) {
      double acc = 0.0;
      for (std::size_t i = lo; i < hi; ++i) acc += A(i, j);
      out(s, j) = acc * inv;
    }
  }
  std::vector<std::size_t> b(boundaries.begin(), boundaries.end());
  const std::size_t ai = a.id;
  return t.record(std::move(out), t.requires_grad(ai), [ai, b = std::move(b), f](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad(self);
    Tensor& GA = tp.grad(ai);
    for (std::size_t s = 0; s + 1 < b.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(b[s + 1] - b[s]);
      for (std::size_t i = b[s]; i < b[s + 1]; ++i)
        for (std::size_t j = 0; j < f; ++j) GA(i, j) += G(s, j) * inv;
    }
  });
}

/// Inverted dropout drawing its keep decisions from the tape's seed stream.
/// Identity when the tape is not in training mode or rate is 0.
inline Var dropout(Var a, double rate) {
  Tape& t = *a.tape;
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!t.training() || rate == 0.0) return a;
  const Tensor& A = a.value();
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  std::vector<double> factor(A.size());
  for (double& v : factor) v = keep(t.rng()) ? s : 0.0;
  Tensor out(A.shape());
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = A[e] * factor[e];
  const std::size_t ai = a.id;
  return t.record(std::move(out), t.requires_grad(ai), [ai, factor = std::move(factor)](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad(self);
    Tensor& GA = tp.grad(ai);
    for (std::size_t e = 0; e < G.size(); ++e) GA[e] += G[e] * factor[e];
  });
}

/// out[r] = x[index[r]]
inline Var gather_rows(Var x, std::span<const std::size_t> index) {
  Tape& t = *x.tape;
  const Tensor& X = x.value();
  const std::size_t f = X.cols();
  if (index.empty()) throw ShapeError("gather_rows: empty index");
  Tensor out = Tensor::matrix(index.size(), f);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= X.rows()) throw IndexError("gather_rows: index out of range");
    for (std::size_t j = 0; j < f; ++j) out(r, j) = X(index[r], j);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t xi = x.id;
  return t.record(std::move(out), t.requires_grad(xi), [xi, idx = std::move(idx), f](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad(self);
    Tensor& GX = tp.grad(xi);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < f; ++j) GX(idx[r], j) += G(r, j);
  });
}

/// out[u] = Σ_{e in row u} values[e] · h[col[e]] with edge values taken from
/// a tape node (size nnz). The per-entry reduction is ordered by value, so
/// relabelling nodes permutes the output bit-exactly.
inline Var spmm(const Csr& adj, Var values, Var h) {
  detail::require_same_tape(values, h);
  Tape& t = *h.tape;
  const Tensor& H = h.value();
  const Tensor& V = values.value();
  if (H.rank() != 2 || H.rows() != adj.num_nodes)
    throw ShapeError("spmm: feature rows " + shape_string(H.shape()) + " vs " + std::to_string(adj.num_nodes) + " nodes");
  if (V.size() != adj.nnz()) throw ShapeError("spmm: edge value count does not match nnz");
  const std::size_t n = adj.num_nodes, f = H.cols();
  Tensor out = Tensor::matrix(n, f);
  std::vector<double> buf;
  for (std::size_t u = 0; u < n; ++u) {
    const std::size_t lo = adj.row_ptr[u], hi = adj.row_ptr[u + 1];
    for (std::size_t e = lo; e < hi; ++e)
      if (adj.col[e] >= n) throw IndexError("spmm: column index " + std::to_string(adj.col[e]) + " out of range");
    buf.resize(hi - lo);
    for (std::size_t j = 0; j < f; ++j) {
      for (std::size_t e = lo; e < hi; ++e) buf[e - lo] = V[e] * H(adj.col[e], j);
      out(u, j) = detail::ordered_sum(buf);
    }
  }
  const std::size_t vi = values.id, hi_ = h.id;
  const bool rg = t.requires_grad(vi) || t.requires_grad(hi_);
  const Csr* a = &adj;
  return t.record(std::move(out), rg, [a, vi, hi_, f](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad(self);
    const Tensor& V = tp.value(vi);
    const Tensor& H = tp.value(hi_);
    const bool gv = tp.requires_grad(vi), gh = tp.requires_grad(hi_);
    for (std::size_t u = 0; u < a->num_nodes; ++u) {
      for (std::size_t e = a->row_ptr[u]; e < a->row_ptr[u + 1]; ++e) {
        const std::size_t v = a->col[e];
        if (gh) {
          Tensor& GH = tp.grad(hi_);
          for (std::size_t j = 0; j < f; ++j) GH(v, j) += V[e] * G(u, j);
        }
        if (gv) {
          double s = 0.0;
          for (std::size_t j = 0; j < f; ++j) s += G(u, j) * H(v, j);
          tp.grad(vi)[e] += s;
        }
      }
    }
  });
}

/// spmm with the Csr's own constant values (all ones when it has none).
inline Var spmm(const Csr& adj, Var h) {
  Tensor vals = Tensor::matrix(std::max<std::size_t>(adj.nnz(), 1), 1, 1.0);
  if (adj.nnz() == 0) {
    // No stored entries: the product is identically zero.
    Tape& t = *h.tape;
    const std::size_t hi_ = h.id;
    return t.record(Tensor(h.value().shape(), 0.0), t.requires_grad(hi_), [](Tape&, std::size_t) {});
  }
  if (!adj.values.empty()) vals = Tensor({adj.nnz(), 1}, adj.values);
  Var cv = h.tape->constant(std::move(vals));
  return spmm(adj, cv, h);
}

/// Softmax within each segment [row_ptr[s], row_ptr[s+1]) of a flat score
/// vector. Empty segments yield nothing.
inline Var segment_softmax(Var scores, std::span<const std::size_t> row_ptr) {
  Tape& t = *scores.tape;
  const Tensor& S = scores.value();
  if (row_ptr.empty() || row_ptr.front() != 0 || row_ptr.back() != S.size())
    throw ShapeError("segment_softmax: segments must partition the scores");
  Tensor Y(S.shape());
  std::vector<double> buf;
  for (std::size_t s = 0; s + 1 < row_ptr.size(); ++s) {
    const std::size_t lo = row_ptr[s], hi = row_ptr[s + 1];
    if (lo == hi) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t e = lo; e < hi; ++e) mx = std::max(mx, S[e]);
    buf.resize(hi - lo);
    for (std::size_t e = lo; e < hi; ++e) buf[e - lo] = Y[e] = std::exp(S[e] - mx);
    const double z = detail::ordered_sum(buf);
    for (std::size_t e = lo; e < hi; ++e) Y[e] /= z;
  }
  std::vector<std::size_t> rp(row_ptr.begin(), row_ptr.end());
  const std::size_t si = scores.id;
  return t.record(std::move(Y), t.requires_grad(si), [si, rp = std::move(rp)](Tape& tp, std::size_t self) {
    const Tensor& Y = tp.value(self);
    const Tensor& G = tp.grad(self);
    Tensor& GS = tp.grad(si);
    for (std::size_t s = 0; s + 1 < rp.size(); ++s) {
      double dot = 0.0;
      for (std::size_t e = rp[s]; e < rp[s + 1]; ++e) dot += G[e] * Y[e];
      for (std::size_t e = rp[s]; e < rp[s + 1]; ++e) GS[e] += Y[e] * (G[e] - dot);
    }
  });
}

/// Expands a packed quaternion weight [4, rows_q, cols_q] into the real
/// matrix M of shape [4·cols_q × 4·rows_q] with X·M equal to applying the
/// Hamilton block matrix to every packed row of X. M is the transpose of
/// to_block_matrix(W).
inline Var quat_block(Var packed) {
  Tape& t = *packed.tape;
  const Tensor& P = packed.value();
  if (P.rank() != 3 || P.shape()[0] != 4) throw ShapeError("quat_block: expected packed shape [4, rows, cols]");
  const std::size_t rq = P.shape()[1], cq = P.shape()[2], blk = rq * cq;
  const std::size_t out_cols = 4 * rq;
  Tensor M = Tensor::matrix(4 * cq, out_cols);
  for (int br = 0; br < 4; ++br)
    for (int bc = 0; bc < 4; ++bc) {
      const BlockEntry be = kHamiltonPattern[br][bc];
      const std::size_t src = static_cast<std::size_t>(be.source) * blk;
      for (std::size_t a = 0; a < rq; ++a)
        for (std::size_t b = 0; b < cq; ++b) M(bc * cq + b, br * rq + a) = be.sign * P[src + a * cq + b];
    }
  const std::size_t pi = packed.id;
  return t.record(std::move(M), t.requires_grad(pi), [pi, rq, cq, blk](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad(self);
    Tensor& GP = tp.grad(pi);
    for (int br = 0; br < 4; ++br)
      for (int bc = 0; bc < 4; ++bc) {
        const BlockEntry be = kHamiltonPattern[br][bc];
        const std::size_t src = static_cast<std::size_t>(be.source) * blk;
        for (std::size_t a = 0; a < rq; ++a)
          for (std::size_t b = 0; b < cq; ++b) GP[src + a * cq + b] += be.sign * G(bc * cq + b, br * rq + a);
      }
  });
}

}  // namespace qmpnn::ops
