#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qmpnn/graph.hpp"
#include "qmpnn/ops.hpp"
#include "qmpnn/quaternion.hpp"
#include "qmpnn/tape.hpp"

namespace qmpnn {

enum class LayerKind { gcn, gat, sage };
enum class TaskHead { node_classify, link_decode, graph_classify };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::gcn: return "gcn";
    case LayerKind::gat: return "gat";
    default: return "sage";
  }
}

inline const char* to_string(TaskHead h) {
  switch (h) {
    case TaskHead::node_classify: return "node";
    case TaskHead::link_decode: return "link";
    default: return "graph";
  }
}

/// One message-passing layer. Quaternion arithmetic needs both widths
/// divisible by four (per head, for attention layers).
struct LayerSpec {
  LayerKind kind = LayerKind::gcn;
  Arithmetic arithmetic = Arithmetic::real;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t heads = 1;
  bool activation = true;

  void validate() const {
    if (in == 0 || out == 0) throw ShapeError("LayerSpec: widths must be positive");
    if (heads == 0 || out % heads != 0) throw ShapeError("LayerSpec: output width must divide evenly across heads");
    if (arithmetic == Arithmetic::quaternion && (in % 4 != 0 || (out / heads) % 4 != 0))
      throw ShapeError("LayerSpec: quaternion layer widths must be divisible by 4 (in=" + std::to_string(in) +
                       ", out=" + std::to_string(out) + ")");
  }
};

/// Quaternion linear map on packed features: F/4 input quaternions to F'/4
/// output quaternions. The weight is stored out × in like quat_matvec.
struct QuatLinear {
  QuatMatrix weight;
  std::vector<double> bias;  // real, added to the packed output; empty means none

  std::size_t in_width() const { return 4 * weight.cols(); }
  std::size_t out_width() const { return 4 * weight.rows(); }
  std::size_t weight_parameter_count() const { return weight.real_parameter_count(); }
  std::size_t parameter_count() const { return weight_parameter_count() + bias.size(); }
};

/// Differentiable quaternion transform of packed rows: h · blockᵀ.
inline Var quat_linear(Var h, Var packed_weight) {
  if (h.value().cols() != 4 * packed_weight.shape()[2])
    throw ShapeError("quat_linear: input width " + std::to_string(h.value().cols()) + " does not match weight");
  return ops::matmul(h, ops::quat_block(packed_weight));
}

/// Applies a QuatLinear to every row of h (rows are packed quaternion vectors).
inline Tensor quat_linear_forward(const QuatLinear& layer, const Tensor& h) {
  if (h.cols() % 4 != 0) throw ShapeError("quat_linear_forward: width not divisible by 4");
  Tape t;
  Var x = t.constant(h);
  Var w = t.constant(Tensor({4, layer.weight.rows(), layer.weight.cols()},
                            std::vector<double>(layer.weight.packed().begin(), layer.weight.packed().end())));
  Var y = quat_linear(x, w);
  if (!layer.bias.empty()) y = ops::add(y, t.constant(Tensor({1, layer.bias.size()}, layer.bias)));
  return y.value();
}

/// Structures derived from a graph's adjacency that each layer kind reads.
struct GraphOps {
  Csr gcn;                             // D̃^{-1/2}(A+I)D̃^{-1/2}
  Csr attention;                       // A + I
  std::vector<std::size_t> attention_rows;
  Csr mean;                            // row-normalized A

  static GraphOps build(const Graph& g) {
    GraphOps o;
    o.gcn = normalize_adjacency(g);
    o.attention = with_self_loops(g.csr);
    o.attention_rows = o.attention.entry_rows();
    o.mean = mean_adjacency(g.csr);
    return o;
  }
  static GraphOps build(const Csr& a) {
    Graph g;
    g.num_nodes = a.num_nodes;
    g.csr = a;
    return build(g);
  }
};

struct ModelSpec {
  LayerKind kind = LayerKind::gcn;
  Arithmetic arithmetic = Arithmetic::real;
  std::vector<std::size_t> widths;  // input, hidden..., output of the message-passing stack
  TaskHead head = TaskHead::node_classify;
  std::size_t num_classes = 0;      // graph head output (real linear)
  std::size_t heads = 1;
  double dropout = 0.0;

  std::size_t num_layers() const { return widths.size() - 1; }

  LayerSpec layer(std::size_t l) const {
    const bool last = l + 1 == num_layers();
    const bool act = head == TaskHead::graph_classify || !last;
    return LayerSpec{kind, arithmetic, widths[l], widths[l + 1], kind == LayerKind::gat ? heads : 1, act};
  }

  void validate() const {
    if (widths.size() < 2) throw ShapeError("ModelSpec: need at least one layer");
    const std::size_t expected = head == TaskHead::graph_classify ? 3 : 2;
    if (num_layers() != expected)
      throw ShapeError("ModelSpec: " + std::string(to_string(head)) + " models use " + std::to_string(expected) +
                       " message-passing layers");
    for (std::size_t l = 0; l < num_layers(); ++l) layer(l).validate();
    if (head == TaskHead::graph_classify && num_classes == 0) throw ShapeError("ModelSpec: graph head needs classes");
  }
};

/// Parameters plus the layer wiring that consumes them. Copyable; parameter
/// slots are addressed by index.
class Model {
 public:
  Model() = default;

  Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < spec_.num_layers(); ++l) {
      const LayerSpec ls = spec_.layer(l);
      const std::string p = "layer" + std::to_string(l);
      Slots s;
      const std::size_t per_head = ls.out / ls.heads;
      if (ls.kind == LayerKind::sage) {
        s.weights.push_back(add_weight(p + ".self.weight", ls.arithmetic, ls.in, ls.out, rng));
        s.weights.push_back(add_weight(p + ".neigh.weight", ls.arithmetic, ls.in, ls.out, rng));
      } else if (ls.kind == LayerKind::gat) {
        for (std::size_t h = 0; h < ls.heads; ++h) {
          const std::string hp = ls.heads > 1 ? p + ".head" + std::to_string(h) : p;
          s.weights.push_back(add_weight(hp + ".weight", ls.arithmetic, ls.in, per_head, rng));
          s.att_src.push_back(add_vector(hp + ".att_src", per_head, rng));
          s.att_dst.push_back(add_vector(hp + ".att_dst", per_head, rng));
        }
      } else {
        s.weights.push_back(add_weight(p + ".weight", ls.arithmetic, ls.in, ls.out, rng));
      }
      s.bias = add_bias(p + ".bias", ls.out);
      layers_.push_back(std::move(s));
    }
    if (spec_.head == TaskHead::graph_classify) {
      head_weight_ = add_weight("readout.weight", Arithmetic::real, spec_.widths.back(), spec_.num_classes, rng);
      head_bias_ = add_bias("readout.bias", spec_.num_classes);
    }
  }

  const ModelSpec& spec() const { return spec_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

  /// Node states after the message-passing stack.
  Var embed(Tape& t, const GraphOps& g, const Tensor& features) {
    Var h = t.constant(features);
    for (std::size_t l = 0; l < layers_.size(); ++l) h = layer_forward(t, g, l, h);
    return h;
  }

  /// Output of a single layer, without dropout when the tape is in eval mode.
  Var layer_forward(Tape& t, const GraphOps& g, std::size_t l, Var h) {
    const LayerSpec ls = spec_.layer(l);
    const Slots& s = layers_[l];
    if (h.value().cols() != ls.in)
      throw ShapeError("layer " + std::to_string(l) + ": input width " + std::to_string(h.value().cols()) +
                       " != " + std::to_string(ls.in));
    h = ops::dropout(h, spec_.dropout);
    Var out;
    switch (ls.kind) {
      case LayerKind::gcn:
        out = ops::spmm(g.gcn, transform(t, s.weights[0], h));
        break;
      case LayerKind::sage:
        out = ops::add(transform(t, s.weights[0], h), ops::spmm(g.mean, transform(t, s.weights[1], h)));
        break;
      case LayerKind::gat: {
        std::vector<Var> heads;
        for (std::size_t k = 0; k < s.weights.size(); ++k) {
          Var z = transform(t, s.weights[k], h);
          Var src = ops::matmul(z, t.param(params_[s.att_src[k]]));
          Var dst = ops::matmul(z, t.param(params_[s.att_dst[k]]));
          Var logits = ops::leaky_relu(
              ops::add(ops::gather_rows(dst, g.attention_rows), ops::gather_rows(src, g.attention.col)), 0.2);
          Var alpha = ops::segment_softmax(logits, g.attention.row_ptr);
          heads.push_back(ops::spmm(g.attention, alpha, z));
        }
        out = heads.size() == 1 ? heads.front() : ops::concat_cols(heads);
        break;
      }
    }
    out = ops::add(out, t.param(params_[s.bias]));
    return ls.activation ? ops::relu(out) : out;
  }

  /// Log-probabilities over the first `eligible_classes` output columns;
  /// trailing dummy columns are dropped before normalization.
  Var node_log_probs(Tape& t, const GraphOps& g, const Tensor& features, std::size_t eligible_classes) {
    Var h = embed(t, g, features);
    const std::size_t width = h.value().cols();
    if (eligible_classes == 0 || eligible_classes > width) throw ShapeError("node_log_probs: bad class count");
    if (eligible_classes < width) {
      Tensor select = Tensor::matrix(width, eligible_classes);
      for (std::size_t c = 0; c < eligible_classes; ++c) select(c, c) = 1.0;
      h = ops::matmul(h, t.constant(std::move(select)));
    }
    return ops::log_softmax_rows(h);
  }

  /// Mean readout per graph followed by a real linear classifier.
  Var graph_log_probs(Tape& t, const GraphOps& g, const Tensor& features, std::span<const std::size_t> boundaries) {
    Var pooled = ops::mean_pool(embed(t, g, features), boundaries);
    Var logits = ops::add(ops::matmul(pooled, t.param(params_[head_weight_])), t.param(params_[head_bias_]));
    return ops::log_softmax_rows(logits);
  }

 private:
  struct Slots {
    std::vector<std::size_t> weights;
    std::vector<std::size_t> att_src, att_dst;
    std::size_t bias = 0;
  };

  Var transform(Tape& t, std::size_t slot, Var h) {
    Parameter& p = params_[slot];
    Var w = t.param(p);
    return p.arithmetic == Arithmetic::quaternion ? quat_linear(h, w) : ops::matmul(h, w);
  }

  std::size_t add_weight(const std::string& name, Arithmetic a, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor v = a == Arithmetic::quaternion ? Tensor({4, out / 4, in / 4}) : Tensor::matrix(in, out);
    for (double& x : v.data()) x = dist(rng);
    params_.emplace_back(name, std::move(v), a, true);
    return params_.size() - 1;
  }

  std::size_t add_vector(const std::string& name, std::size_t d, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(d + 1));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor v = Tensor::matrix(d, 1);
    for (double& x : v.data()) x = dist(rng);
    params_.emplace_back(name, std::move(v), Arithmetic::real, true);
    return params_.size() - 1;
  }

  std::size_t add_bias(const std::string& name, std::size_t d) {
    params_.emplace_back(name, Tensor::matrix(1, d), Arithmetic::real, false);
    return params_.size() - 1;
  }

  ModelSpec spec_;
  std::vector<Parameter> params_;
  std::vector<Slots> layers_;
  std::size_t head_weight_ = 0, head_bias_ = 0;
};

inline Var readout_mean(Var h, std::span<const std::size_t> boundaries) { return ops::mean_pool(h, boundaries); }

/// Dot product of two node states over their packed real components.
inline double link_score(const Tensor& h, std::size_t u, std::size_t v) {
  if (u >= h.rows() || v >= h.rows()) throw IndexError("link_score: node out of range");
  double s = 0.0;
  for (std::size_t j = 0; j < h.cols(); ++j) s += h(u, j) * h(v, j);
  return s;
}

/// Differentiable link logits for a batch of node pairs, shape [m × 1].
inline Var link_logits(Var h, const std::vector<Edge>& pairs) {
  std::vector<std::size_t> us, vs;
  us.reserve(pairs.size());
  vs.reserve(pairs.size());
  for (auto [u, v] : pairs) {
    us.push_back(u);
    vs.push_back(v);
  }
  return ops::row_sum(ops::mul(ops::gather_rows(h, us), ops::gather_rows(h, vs)));
}

inline std::size_t count_params(const Model& m) {
  std::size_t n = 0;
  for (const auto& p : m.params()) n += p.value.size();
  return n;
}

/// Trainable scalars left after masking: alive mask entries plus every
/// unmasked parameter.
inline std::size_t count_active_params(const Model& m) {
  std::size_t n = 0;
  for (const auto& p : m.params()) n += p.mask ? p.mask->alive_count() : p.value.size();
  return n;
}

/// Weight-only count (no biases or attention vectors) of a single dense
/// transform of the given widths.
inline std::size_t linear_weight_count(Arithmetic a, std::size_t in, std::size_t out) {
  return a == Arithmetic::quaternion ? (in / 4) * (out / 4) * 4 : in * out;
}

/// Multiply-accumulate count of one layer's forward pass on a graph.
inline double layer_macs(const LayerSpec& ls, std::size_t n, std::size_t nnz_adj) {
  const double nd = static_cast<double>(n);
  const double in = static_cast<double>(ls.in), out = static_cast<double>(ls.out);
  // A quaternion transform runs as a dense (4·in/4) × (4·out/4) product, so
  // its multiply-accumulate count equals that of a real one.
  switch (ls.kind) {
    case LayerKind::gcn:
      return nd * in * out + static_cast<double>(nnz_adj + n) * out;
    case LayerKind::sage:
      return 2.0 * nd * in * out + static_cast<double>(nnz_adj) * out;
    default:
      return nd * in * out + 2.0 * nd * out + static_cast<double>(nnz_adj + n) * (out + 1.0);
  }
}

/// FLOPs (2 × multiply-accumulates) of one full forward pass on `g`.
inline double count_flops(const Model& m, const Graph& g) {
  const ModelSpec& s = m.spec();
  double macs = 0.0;
  for (std::size_t l = 0; l < s.num_layers(); ++l) macs += layer_macs(s.layer(l), g.num_nodes, g.csr.nnz());
  if (s.head == TaskHead::graph_classify) macs += static_cast<double>(s.widths.back() * s.num_classes);
  return 2.0 * macs;
}

}  // namespace qmpnn
