#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "qmpnn/errors.hpp"
#include "qmpnn/tensor.hpp"

namespace qmpnn {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Linear record of primitive applications for one forward pass. Backward
/// replays the record in exact reverse order, so gradients are a pure
/// function of the recorded inputs.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;  // leaf bound to a parameter value
    Mask* mask = nullptr;        // leaf bound to a parameter mask
  };

  explicit Tape(std::uint64_t seed = 0, bool training = false) : rng_(seed), training_(training) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool training() const { return training_; }
  std::mt19937_64& rng() { return rng_; }

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var leaf(Tensor value) { return push(std::move(value), true, nullptr); }

  /// Binds a parameter. With a mask attached the returned node is m ⊙ W;
  /// soft masks are themselves differentiable leaves.
  Var param(Parameter& p);

  Var record(Tensor value, bool requires_grad, BackwardFn fn) {
    return push(std::move(value), requires_grad, requires_grad ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node; valid only inside backward for nodes that
  /// require grad.
  Tensor& grad(std::size_t id) { return nodes_[id].grad; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Parameter and mask gradients are
  /// accumulated into their owners.
  void backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (value(loss.id).size() != 1) throw ShapeError("backward: loss must be a scalar");
    for (auto& n : nodes_)
      if (n.requires_grad) n.grad = Tensor(n.value.shape(), 0.0);
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) {
        auto& g = n.param->grad.storage();
        for (std::size_t e = 0; e < g.size(); ++e) g[e] += n.grad[e];
      }
      if (n.mask) {
        for (std::size_t e = 0; e < n.mask->grad.size(); ++e) n.mask->grad[e] += n.grad[e];
      }
    }
  }

 private:
  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::mt19937_64 rng_;
  bool training_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

inline Var Tape::param(Parameter& p) {
  Var w = push(p.value, true, nullptr);
  nodes_[w.id].param = &p;
  if (!p.mask) return w;
  Mask& m = *p.mask;
  if (m.size() != p.value.size()) throw ShapeError("param: mask shape does not match parameter " + p.name);
  const bool soft = m.phase == MaskPhase::soft;
  Var mv = push(Tensor(p.value.shape(), m.values), soft, nullptr);
  if (soft) nodes_[mv.id].mask = &m;
  Tensor out(p.value.shape());
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = m.values[e] * p.value[e];
  const std::size_t wid = w.id, mid = mv.id;
  return record(std::move(out), true, [wid, mid](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& wv = t.value(wid);
    const Tensor& mvv = t.value(mid);
    Tensor& gw = t.grad(wid);
    for (std::size_t e = 0; e < g.size(); ++e) gw[e] += mvv[e] * g[e];
    if (t.requires_grad(mid)) {
      Tensor& gm = t.grad(mid);
      for (std::size_t e = 0; e < g.size(); ++e) gm[e] += wv[e] * g[e];
    }
  });
}

}  // namespace qmpnn
