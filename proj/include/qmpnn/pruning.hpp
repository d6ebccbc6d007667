#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "qmpnn/train.hpp"

namespace qmpnn {

struct PruneConfig {
  double eta = 0.01;           // weight step size (Adam)
  double lambda = 0.01;        // mask step size (SGD)
  std::size_t iterations = 100;
  double fraction = 0.2;       // pruned share of surviving entries per round
  double target = 0.48;
  std::size_t max_rounds = 30;

  void validate() const {
    if (iterations == 0) throw std::invalid_argument("PruneConfig: iterations must be positive");
    if (!(fraction > 0 && fraction < 1)) throw std::invalid_argument("PruneConfig: fraction must lie in (0, 1)");
    if (!(target > 0 && target < 1)) throw std::invalid_argument("PruneConfig: target sparsity must lie in (0, 1)");
    if (!(eta > 0) || !(lambda > 0)) throw std::invalid_argument("PruneConfig: step sizes must be positive");
    if (max_rounds == 0) throw std::invalid_argument("PruneConfig: max_rounds must be positive");
  }
};

/// Gives every prunable parameter an all-ones hard mask (existing masks are kept).
inline void attach_masks(Model& m) {
  for (auto& p : m.params())
    if (p.prunable && !p.mask) p.mask = Mask::ones(p.value.size());
}

/// Elementwise m ⊙ W outside of a tape.
inline Tensor apply_mask(const Parameter& p) {
  if (!p.mask) return p.value;
  if (p.mask->size() != p.value.size()) throw ShapeError("apply_mask: mask shape does not match " + p.name);
  Tensor out = p.value;
  for (std::size_t e = 0; e < out.size(); ++e) out[e] *= p.mask->values[e];
  return out;
}

/// 1 − nonzeros/total of a hard mask.
inline double sparsity(const Mask& m) {
  if (m.size() == 0) return 0.0;
  return static_cast<double>(m.size() - m.alive_count()) / static_cast<double>(m.size());
}

/// Sparsity over all prunable parameters taken together.
inline double sparsity(const Model& model) {
  std::size_t total = 0, alive = 0;
  for (const auto& p : model.params()) {
    if (!p.prunable) continue;
    total += p.value.size();
    alive += p.mask ? p.mask->alive_count() : p.value.size();
  }
  // pruned / total rather than 1 − alive / total, so exact ratios compare
  // equal to the target literal
  return total == 0 ? 0.0 : static_cast<double>(total - alive) / static_cast<double>(total);
}

/// Survivors go back to 1, pruned entries stay frozen at 0.
inline void soften_masks(Model& m) {
  for (auto& p : m.params()) {
    if (!p.mask) continue;
    for (std::size_t e = 0; e < p.mask->size(); ++e) p.mask->values[e] = p.mask->alive[e] ? 1.0 : 0.0;
    p.mask->phase = MaskPhase::soft;
  }
}

/// Zeroes the `fraction` share (floored) of surviving entries with the
/// smallest |m|, ranked across all masks; ties go to the lower flat index
/// in parameter order. Returns the number of entries newly pruned.
inline std::size_t threshold_masks(Model& m, double fraction) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> ranked;  // |m|, param, entry
  for (std::size_t q = 0; q < m.params().size(); ++q) {
    const auto& p = m.params()[q];
    if (!p.mask) continue;
    for (std::size_t e = 0; e < p.mask->size(); ++e)
      if (p.mask->alive[e]) ranked.emplace_back(std::abs(p.mask->values[e]), q, e);
  }
  if (ranked.empty()) throw std::invalid_argument("threshold_masks: mask is all zero");
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(ranked.size()) + 1e-9));
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end());
  for (std::size_t r = 0; r < k; ++r) {
    auto& mask = *m.params()[std::get<1>(ranked[r])].mask;
    mask.alive[std::get<2>(ranked[r])] = 0;
  }
  for (auto& p : m.params()) {
    if (!p.mask) continue;
    for (std::size_t e = 0; e < p.mask->size(); ++e) p.mask->values[e] = p.mask->alive[e];
    p.mask->phase = MaskPhase::hard;
  }
  return k;
}

/// One sparsification round: `iterations` epochs co-training W (Adam, step
/// eta, the run's weight decay) and the soft masks (plain SGD, step lambda,
/// no decay), then a hard threshold. Returns the number newly pruned.
inline std::size_t sparsify(Model& model, Task& task, const PruneConfig& cfg, const TrainConfig& train_cfg,
                            std::uint64_t seed) {
  cfg.validate();
  attach_masks(model);
  std::size_t alive = 0;
  for (const auto& p : model.params())
    if (p.mask) alive += p.mask->alive_count();
  if (alive == 0) throw std::invalid_argument("sparsify: mask is all zero");
  soften_masks(model);
  Adam opt(cfg.eta, train_cfg.weight_decay, train_cfg.beta1, train_cfg.beta2, train_cfg.epsilon);
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const std::size_t batches = task.num_batches(it);
    for (std::size_t b = 0; b < batches; ++b) {
      zero_grads(model);
      Tape tape(mix_seed(seed, it, b), true);
      Var loss = task.train_loss(tape, model, b, it);
      if (!std::isfinite(loss.value()[0]))
        throw NumericError("sparsify: non-finite loss at iteration " + std::to_string(it));
      tape.backward(loss);
      opt.step(model.params());
      for (auto& p : model.params()) {
        if (!p.mask) continue;
        for (std::size_t e = 0; e < p.mask->size(); ++e)
          if (p.mask->alive[e]) p.mask->values[e] -= cfg.lambda * p.mask->grad[e];
      }
    }
  }
  return threshold_masks(model, cfg.fraction);
}

struct TicketState {
  std::vector<Tensor> w0;  // initialization, one tensor per parameter slot
  std::vector<std::optional<Mask>> masks;
  double sparsity = 0.0;
  std::size_t rounds = 0;
  bool reached = false;
};

/// Called after every round with the rewound, masked model.
using RoundCallback = std::function<void(std::size_t round, const Model& ticket)>;

/// Iterative ticket search: sparsify, then rewind every parameter to its
/// initialization, until sparsity reaches the target or the round cap hits.
/// The model must be freshly initialized; on return it holds W⁰ and the mask.
inline TicketState find_ticket(Model& model, Task& task, const PruneConfig& cfg, const TrainConfig& train_cfg,
                               std::uint64_t seed, const RoundCallback& on_round = {}) {
  cfg.validate();
  TicketState st;
  for (const auto& p : model.params()) st.w0.push_back(p.value);
  attach_masks(model);
  st.sparsity = sparsity(model);
  while (st.sparsity < cfg.target && st.rounds < cfg.max_rounds) {
    sparsify(model, task, cfg, train_cfg, mix_seed(seed, 1000 + st.rounds));
    for (std::size_t q = 0; q < st.w0.size(); ++q) model.params()[q].value = st.w0[q];
    ++st.rounds;
    st.sparsity = sparsity(model);
    if (on_round) on_round(st.rounds, model);
  }
  st.reached = st.sparsity >= cfg.target;
  for (const auto& p : model.params()) st.masks.push_back(p.mask);
  return st;
}

}  // namespace qmpnn
