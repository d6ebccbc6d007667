#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "qmpnn/errors.hpp"

namespace qmpnn {

/// Compressed sparse row structure of an n × n matrix. Row u lists the
/// sources v whose messages node u receives; column indices are sorted and
/// unique within a row.
struct Csr {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> col;
  std::vector<double> values;  // empty means "all ones"

  std::size_t nnz() const { return col.size(); }
  std::size_t degree(std::size_t u) const { return row_ptr[u + 1] - row_ptr[u]; }

  /// Throws IndexError on out-of-range columns, ShapeError on malformed
  /// offsets or duplicate columns.
  void validate() const {
    if (row_ptr.size() != num_nodes + 1 || row_ptr.front() != 0 || row_ptr.back() != col.size())
      throw ShapeError("Csr: row offsets inconsistent with column array");
    if (!values.empty() && values.size() != col.size()) throw ShapeError("Csr: values length mismatch");
    for (std::size_t u = 0; u < num_nodes; ++u) {
      if (row_ptr[u] > row_ptr[u + 1]) throw ShapeError("Csr: row offsets not monotone");
      for (std::size_t e = row_ptr[u]; e < row_ptr[u + 1]; ++e) {
        if (col[e] >= num_nodes)
          throw IndexError("Csr: column index " + std::to_string(col[e]) + " >= " + std::to_string(num_nodes));
        if (e > row_ptr[u] && col[e] <= col[e - 1]) throw ShapeError("Csr: duplicate or unsorted column in row");
      }
    }
  }

  /// Row owning each stored entry.
  std::vector<std::size_t> entry_rows() const {
    std::vector<std::size_t> rows(col.size());
    for (std::size_t u = 0; u < num_nodes; ++u)
      for (std::size_t e = row_ptr[u]; e < row_ptr[u + 1]; ++e) rows[e] = u;
    return rows;
  }

  bool has_entry(std::size_t u, std::size_t v) const {
    auto first = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[u]);
    auto last = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[u + 1]);
    return std::binary_search(first, last, v);
  }

  /// Builds a CSR from (row, col, value) triples; duplicate pairs are merged
  /// keeping the first value.
  static Csr from_triples(std::size_t n, std::vector<std::size_t> rows, std::vector<std::size_t> cols,
                          std::vector<double> vals = {}) {
    const bool weighted = !vals.empty();
    std::vector<std::size_t> order(rows.size());
    for (std::size_t e = 0; e < order.size(); ++e) {
      if (rows[e] >= n || cols[e] >= n) throw IndexError("Csr: node id out of range");
      order[e] = e;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return rows[a] != rows[b] ? rows[a] < rows[b] : cols[a] < cols[b];
    });
    Csr m;
    m.num_nodes = n;
    m.row_ptr.assign(n + 1, 0);
    for (std::size_t idx = 0; idx < order.size(); ++idx) {
      const std::size_t e = order[idx];
      if (idx > 0) {
        const std::size_t p = order[idx - 1];
        if (rows[p] == rows[e] && cols[p] == cols[e]) continue;
      }
      m.col.push_back(cols[e]);
      if (weighted) m.values.push_back(vals[e]);
      ++m.row_ptr[rows[e] + 1];
    }
    for (std::size_t u = 0; u < n; ++u) m.row_ptr[u + 1] += m.row_ptr[u];
    return m;
  }
};

}  // namespace qmpnn
