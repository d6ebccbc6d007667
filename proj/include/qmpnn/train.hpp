#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qmpnn/graph.hpp"
#include "qmpnn/layers.hpp"
#include "qmpnn/metrics.hpp"

namespace qmpnn {

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  double dropout = 0.6;
  std::size_t max_epochs = 1000;
  std::size_t patience = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0) || weight_decay < 0 || dropout < 0 || dropout >= 1 || max_epochs == 0 || patience == 0 ||
        patience > max_epochs || !(epsilon > 0) || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw std::invalid_argument("TrainConfig: invalid hyperparameters");
  }
};

struct RunResult {
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::pair<std::string, double>> metrics;  // first entry is the primary metric
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::size_t params = 0;
  double wall_seconds = 0.0;

  double metric() const { return metrics.empty() ? std::numeric_limits<double>::quiet_NaN() : metrics.front().second; }
};

/// splitmix64 finalizer; derives independent stream seeds from (seed, a, b).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Adam with L2 weight decay folded into the gradient. Positions whose mask
/// entry is dead are never touched, moments included.
class Adam {
 public:
  Adam(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  explicit Adam(const TrainConfig& c) : Adam(c.learning_rate, c.weight_decay, c.beta1, c.beta2, c.epsilon) {}

  void step(std::vector<Parameter>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t q = 0; q < params.size(); ++q) {
      Parameter& p = params[q];
      const std::uint8_t* alive = p.mask ? p.mask->alive.data() : nullptr;
      auto& m = m_[q];
      auto& v = v_[q];
      for (std::size_t e = 0; e < p.value.size(); ++e) {
        if (alive && !alive[e]) continue;
        const double g = p.grad[e] + (p.decay ? wd_ * p.value[e] : 0.0);
        m[e] = b1_ * m[e] + (1.0 - b1_) * g;
        v[e] = b2_ * v[e] + (1.0 - b2_) * g * g;
        p.value[e] -= lr_ * (m[e] / c1) / (std::sqrt(v[e] / c2) + eps_);
      }
    }
  }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// What a training run needs from a dataset/task pairing.
class Task {
 public:
  virtual ~Task() = default;
  virtual std::size_t num_batches(std::uint64_t /*epoch*/) const { return 1; }
  /// Training-mode loss for one batch; `tape` carries the dropout stream.
  virtual Var train_loss(Tape& tape, Model& model, std::size_t batch, std::uint64_t epoch) = 0;
  virtual double val_loss(Model& model) = 0;
  /// Held-out metrics; the first is the primary one.
  virtual std::vector<std::pair<std::string, double>> test_metrics(Model& model) = 0;
  /// Graph the FLOP count refers to.
  virtual const Graph& reference_graph() const = 0;
};

inline void zero_grads(Model& m) {
  for (auto& p : m.params()) p.zero_grad();
}

/// Full training run: Adam steps, early stopping on validation loss,
/// restore of the best parameters, then a single test evaluation.
inline RunResult train(Model& model, Task& task, const TrainConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Adam opt(cfg);
  RunResult r;
  std::vector<Tensor> best;
  for (const auto& p : model.params()) best.push_back(p.value);
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const std::size_t batches = task.num_batches(epoch);
    for (std::size_t b = 0; b < batches; ++b) {
      zero_grads(model);
      Tape tape(mix_seed(cfg.seed, epoch, b), true);
      Var loss = task.train_loss(tape, model, b, epoch);
      if (!std::isfinite(loss.value()[0]))
        throw NumericError("train: non-finite training loss at epoch " + std::to_string(epoch));
      tape.backward(loss);
      opt.step(model.params());
    }
    r.epochs_run = epoch;
    const double val = task.val_loss(model);
    if (!std::isfinite(val)) throw NumericError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    if (val < r.best_val_loss) {
      r.best_val_loss = val;
      r.best_epoch = epoch;
      for (std::size_t q = 0; q < best.size(); ++q) best[q] = model.params()[q].value;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  for (std::size_t q = 0; q < best.size(); ++q) model.params()[q].value = best[q];
  r.metrics = task.test_metrics(model);
  r.params = count_active_params(model);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// Transductive node classification on one graph.
class NodeTask : public Task {
 public:
  /// `num_classes` counts real classes; the model may emit more columns
  /// (dummy classes), which are ignored.
  NodeTask(Graph g, std::size_t num_classes, const SplitMasks& masks)
      : graph_(std::move(g)), ops_(GraphOps::build(graph_)), classes_(num_classes),
        train_(mask_indices(masks.train)), val_(mask_indices(masks.val)), test_(mask_indices(masks.test)) {
    if (graph_.labels.size() != graph_.num_nodes) throw std::invalid_argument("NodeTask: labels missing");
    if (train_.empty() || val_.empty() || test_.empty()) throw std::invalid_argument("NodeTask: empty split");
  }

  Var train_loss(Tape& t, Model& m, std::size_t, std::uint64_t) override {
    return ops::nll_loss(m.node_log_probs(t, ops_, graph_.features, classes_), graph_.labels, train_);
  }

  double val_loss(Model& m) override {
    Tape t;
    return ops::nll_loss(m.node_log_probs(t, ops_, graph_.features, classes_), graph_.labels, val_).value()[0];
  }

  std::vector<std::pair<std::string, double>> test_metrics(Model& m) override {
    return {{"accuracy", accuracy_on(m, test_)}};
  }

  double accuracy_on(Model& m, const std::vector<std::size_t>& rows) {
    Tape t;
    Var lp = m.node_log_probs(t, ops_, graph_.features, classes_);
    return accuracy(lp.value(), graph_.labels, rows, classes_);
  }

  const std::vector<std::size_t>& train_rows() const { return train_; }
  const Graph& reference_graph() const override { return graph_; }
  const GraphOps& graph_ops() const { return ops_; }

 private:
  Graph graph_;
  GraphOps ops_;
  std::size_t classes_;
  std::vector<std::size_t> train_, val_, test_;
};

/// Link prediction with a dot-product decoder. Training negatives are
/// resampled every epoch from non-edges of the message-passing graph.
class LinkTask : public Task {
 public:
  LinkTask(const Graph& g, const SplitSpec& spec, std::size_t hits_k = 50)
      : split_(make_edge_splits(g, spec)), hits_k_(hits_k), seed_(spec.seed) {
    graph_.num_nodes = g.num_nodes;
    graph_.features = g.features;
    graph_.csr = split_.message_csr;
    ops_ = GraphOps::build(graph_);
    if (split_.val_pos.empty() || split_.test_pos.empty()) throw std::invalid_argument("LinkTask: empty split");
  }

  Var train_loss(Tape& t, Model& m, std::size_t, std::uint64_t epoch) override {
    Var h = m.embed(t, ops_, graph_.features);
    auto pairs = split_.train_pos;
    const auto neg = sample_negative_edges(split_.message_csr, split_.train_pos.size(), mix_seed(seed_, epoch, 7));
    pairs.insert(pairs.end(), neg.begin(), neg.end());
    std::vector<double> targets(split_.train_pos.size(), 1.0);
    targets.resize(pairs.size(), 0.0);
    return ops::bce_with_logits(link_logits(h, pairs), targets);
  }

  double val_loss(Model& m) override {
    Tape t;
    Var h = m.embed(t, ops_, graph_.features);
    auto pairs = split_.val_pos;
    pairs.insert(pairs.end(), split_.val_neg.begin(), split_.val_neg.end());
    std::vector<double> targets(split_.val_pos.size(), 1.0);
    targets.resize(pairs.size(), 0.0);
    return ops::bce_with_logits(link_logits(h, pairs), targets).value()[0];
  }

  std::vector<std::pair<std::string, double>> test_metrics(Model& m) override {
    Tape t;
    const Tensor h = m.embed(t, ops_, graph_.features).value();
    std::vector<double> pos, neg;
    for (auto [u, v] : split_.test_pos) pos.push_back(link_score(h, u, v));
    for (auto [u, v] : split_.test_neg) neg.push_back(link_score(h, u, v));
    std::vector<std::pair<std::string, double>> out{{"roc_auc", roc_auc(pos, neg)}};
    if (neg.size() >= hits_k_) out.emplace_back("hits@" + std::to_string(hits_k_), hits_at_k(pos, neg, hits_k_));
    return out;
  }

  const Graph& reference_graph() const override { return graph_; }
  const EdgeSplit& split() const { return split_; }

 private:
  EdgeSplit split_;
  Graph graph_;
  GraphOps ops_;
  std::size_t hits_k_;
  std::uint64_t seed_;
};

/// Graph classification with mean readout; training batches of whole graphs
/// are reshuffled every epoch.
class GraphTask : public Task {
 public:
  GraphTask(GraphDataset ds, const SplitSpec& spec, std::size_t batch_size = 32)
      : ds_(std::move(ds)), batch_size_(batch_size), seed_(spec.seed) {
    ds_.split = make_graph_splits(ds_.graphs.size(), spec);
    for (std::size_t i = 0; i < ds_.graphs.size(); ++i) (ds_.split[i] == 0 ? train_ : ds_.split[i] == 1 ? val_ : test_).push_back(i);
    if (train_.empty() || val_.empty() || test_.empty()) throw std::invalid_argument("GraphTask: empty split");
    val_batch_ = make_batch(val_);
    test_batch_ = make_batch(test_);
  }

  std::size_t num_batches(std::uint64_t) const override { return (train_.size() + batch_size_ - 1) / batch_size_; }

  Var train_loss(Tape& t, Model& m, std::size_t batch, std::uint64_t epoch) override {
    if (epoch != order_epoch_) {
      order_ = train_;
      std::mt19937_64 rng(mix_seed(seed_, epoch, 11));
      std::shuffle(order_.begin(), order_.end(), rng);
      order_epoch_ = epoch;
    }
    const std::size_t lo = batch * batch_size_, hi = std::min(order_.size(), lo + batch_size_);
    current_ = make_batch(std::vector<std::size_t>(order_.begin() + static_cast<std::ptrdiff_t>(lo),
                                                   order_.begin() + static_cast<std::ptrdiff_t>(hi)));
    return loss_on(t, m, current_);
  }

  double val_loss(Model& m) override {
    Tape t;
    return loss_on(t, m, val_batch_).value()[0];
  }

  std::vector<std::pair<std::string, double>> test_metrics(Model& m) override {
    Tape t;
    Var lp = m.graph_log_probs(t, test_batch_.ops, test_batch_.batch.graph.features, test_batch_.batch.boundaries);
    return {{"accuracy", accuracy(lp.value(), test_batch_.labels)}};
  }

  const Graph& reference_graph() const override { return ds_.graphs.front(); }

 private:
  struct Prepared {
    GraphBatch batch;
    GraphOps ops;
    std::vector<int> labels;
    std::vector<std::size_t> rows;
  };

  Prepared make_batch(const std::vector<std::size_t>& ids) const {
    std::vector<const Graph*> parts;
    Prepared p;
    for (std::size_t i : ids) {
      parts.push_back(&ds_.graphs[i]);
      p.labels.push_back(ds_.graph_labels[i]);
      p.rows.push_back(p.rows.size());
    }
    p.batch = batch_graphs(parts);
    p.ops = GraphOps::build(p.batch.graph);
    return p;
  }

  Var loss_on(Tape& t, Model& m, const Prepared& p) {
    Var lp = m.graph_log_probs(t, p.ops, p.batch.graph.features, p.batch.boundaries);
    return ops::nll_loss(lp, p.labels, p.rows);
  }

  GraphDataset ds_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::vector<std::size_t> train_, val_, test_, order_;
  std::uint64_t order_epoch_ = 0;
  Prepared val_batch_, test_batch_, current_;
};

/// Runs fn(0..n-1) on up to `workers` threads. Each call owns its own state;
/// results land in index order regardless of completion order.
template <class R, class Fn>
std::vector<R> parallel_map(std::size_t n, std::size_t workers, Fn fn) {
  std::vector<R> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct MultiSeedResult {
  std::vector<std::uint64_t> seeds;
  std::vector<RunResult> runs;

  std::vector<double> primary() const {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.metric());
    return v;
  }
  SeedSummary summary() const {
    const auto v = primary();
    return summarize(v);
  }
};

/// One run per seed; `run` must build all of its state from the seed.
inline MultiSeedResult multi_seed(const std::function<RunResult(std::uint64_t)>& run,
                                  const std::vector<std::uint64_t>& seeds, std::size_t workers = 1) {
  if (seeds.size() < 2) throw std::invalid_argument("multi_seed: need at least 2 seeds");
  MultiSeedResult r;
  r.seeds = seeds;
  r.runs = parallel_map<RunResult>(seeds.size(), workers, [&](std::size_t i) { return run(seeds[i]); });
  return r;
}

/// Paired comparison of two models evaluated on the same seeds.
inline PairedTest compare(const MultiSeedResult& a, const MultiSeedResult& b, double alpha = 0.05) {
  if (a.seeds != b.seeds) throw std::invalid_argument("compare: runs used different seeds");
  const auto x = a.primary(), y = b.primary();
  return paired_t_test(x, y, alpha);
}

}  // namespace qmpnn
