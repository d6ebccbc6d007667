#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "qmpnn/tensor.hpp"

namespace qmpnn {

/// Fraction of listed rows whose argmax over the first `eligible_classes`
/// columns equals the label. Columns past that (dummy classes) never win.
inline double accuracy(const Tensor& scores, std::span<const int> labels, std::span<const std::size_t> rows,
                       std::size_t eligible_classes) {
  if (rows.empty()) throw std::invalid_argument("accuracy: empty evaluation set");
  if (eligible_classes == 0 || eligible_classes > scores.cols()) throw ShapeError("accuracy: bad class count");
  std::size_t correct = 0;
  for (std::size_t r : rows) {
    if (r >= scores.rows() || r >= labels.size()) throw IndexError("accuracy: row out of range");
    std::size_t best = 0;
    for (std::size_t c = 1; c < eligible_classes; ++c)
      if (scores(r, c) > scores(r, best)) best = c;
    if (static_cast<int>(best) == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

inline double accuracy(const Tensor& scores, std::span<const int> labels) {
  std::vector<std::size_t> rows(scores.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return accuracy(scores, labels, rows, scores.cols());
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half (Mann–Whitney U / (P·N)).
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t q = i; q < j; ++q) {
      if (labels[order[q]]) {
        rank_sum += avg_rank;
        ++pos;
      } else {
        ++neg;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc: both classes must be present");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

inline double roc_auc(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  std::vector<double> s(pos_scores.begin(), pos_scores.end());
  s.insert(s.end(), neg_scores.begin(), neg_scores.end());
  std::vector<int> y(pos_scores.size(), 1);
  y.resize(s.size(), 0);
  return roc_auc(s, y);
}

/// Macro one-vs-rest ROC-AUC over the first `eligible_classes` columns.
/// Classes absent from (or covering all of) the listed rows are skipped.
inline double one_vs_rest_auc(const Tensor& scores, std::span<const int> labels, std::span<const std::size_t> rows,
                              std::size_t eligible_classes) {
  if (rows.empty()) throw std::invalid_argument("one_vs_rest_auc: empty evaluation set");
  if (eligible_classes == 0 || eligible_classes > scores.cols()) throw ShapeError("one_vs_rest_auc: bad class count");
  double total = 0.0;
  std::size_t used = 0;
  std::vector<double> s(rows.size());
  std::vector<int> y(rows.size());
  for (std::size_t c = 0; c < eligible_classes; ++c) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= scores.rows() || rows[i] >= labels.size()) throw IndexError("one_vs_rest_auc: row out of range");
      s[i] = scores(rows[i], c);
      y[i] = labels[rows[i]] == static_cast<int>(c);
      pos += static_cast<std::size_t>(y[i]);
    }
    if (pos == 0 || pos == rows.size()) continue;
    total += roc_auc(s, y);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("one_vs_rest_auc: need at least two classes present");
  return total / static_cast<double>(used);
}

/// Fraction of positives scored strictly above the k-th highest negative.
inline double hits_at_k(std::span<const double> pos_scores, std::span<const double> neg_scores, std::size_t k) {
  if (k == 0 || neg_scores.size() < k) throw std::invalid_argument("hits_at_k: fewer negatives than k");
  if (pos_scores.empty()) throw std::invalid_argument("hits_at_k: no positives");
  std::vector<double> neg(neg_scores.begin(), neg_scores.end());
  std::nth_element(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(k - 1), neg.end(), std::greater<>());
  const double threshold = neg[k - 1];
  const auto hits = std::count_if(pos_scores.begin(), pos_scores.end(), [&](double s) { return s > threshold; });
  return static_cast<double>(hits) / static_cast<double>(pos_scores.size());
}

struct SeedSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n − 1)
  std::size_t n = 0;
};

inline SeedSummary summarize(std::span<const double> v) {
  SeedSummary s;
  s.n = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

enum class Winner { first, second, tie };

struct PairedTest {
  double mean_diff = 0.0;
  double t = 0.0;
  double p = 1.0;
  Winner winner = Winner::tie;
};

/// Two-sided paired t-test on a[i] − b[i]. A winner is declared only when
/// p < alpha. Zero-variance differences: p = 0 if the mean is non-zero,
/// p = 1 otherwise.
inline PairedTest paired_t_test(std::span<const double> a, std::span<const double> b, double alpha = 0.05) {
  if (a.size() != b.size()) throw ShapeError("paired_t_test: unequal sample sizes");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least 2 seeds");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const SeedSummary s = summarize(d);
  PairedTest r;
  r.mean_diff = s.mean;
  if (s.std == 0.0) {
    r.t = s.mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), s.mean);
    r.p = s.mean == 0.0 ? 1.0 : 0.0;
  } else {
    const double n = static_cast<double>(d.size());
    r.t = s.mean / (s.std / std::sqrt(n));
    boost::math::students_t dist(n - 1.0);
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  }
  if (r.p < alpha) r.winner = r.mean_diff > 0 ? Winner::first : Winner::second;
  return r;
}

}  // namespace qmpnn
