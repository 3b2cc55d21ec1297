#pragma once

// Reverse-mode differentiation over complex-valued, mini-batched nodes.
//
// Every node holds either one value (width 1, shared by the whole batch, e.g.
// anything derived from a phase) or one value per sample (width == batch).
// Binary ops broadcast width-1 operands. Real quantities are stored as complex
// numbers with zero imaginary part.
//
// Adjoints use the convention adj(z) = dL/dRe(z) + i dL/dIm(z) for a real
// root L, so for w = a*b the update is adj(a) += adj(w) * conj(b).

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace bayesmesh {

class GradientTape {
 public:
  using cplx = std::complex<double>;
  using NodeId = std::uint32_t;

  explicit GradientTape(std::size_t batch = 1);

  /// Drops all nodes and ops; keeps allocated capacity.
  void reset(std::size_t batch);
  [[nodiscard]] std::size_t batch() const noexcept { return batch_; }

  /// Real trainable leaf. Throws InvalidArgument if `param` was already
  /// registered since the last reset.
  NodeId phase_leaf(std::size_t param, double value);
  /// Constant of width 1 or batch().
  NodeId constant(std::span<const cplx> values);

  NodeId cis(NodeId phase, double scale);  // exp(i*scale*phase)
  NodeId cos(NodeId phase, double scale);
  NodeId sin(NodeId phase, double scale);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId scale(NodeId a, double k);
  NodeId abs(NodeId a);   // subgradient 0 at the origin
  NodeId abs2(NodeId a);
  /// Per-sample softmax across `logits` (all of width batch()).
  std::vector<NodeId> softmax(std::span<const NodeId> logits);
  /// out[b] = rows[index[b]][b].
  NodeId gather(std::span<const NodeId> rows, std::span<const std::size_t> index);
  /// ln(max(x, floor)); zero gradient where the floor is active.
  NodeId log(NodeId a, double floor);
  /// Batch mean, producing a width-1 node.
  NodeId mean(NodeId a);

  [[nodiscard]] std::span<const cplx> value(NodeId id) const;
  [[nodiscard]] std::size_t width(NodeId id) const { return nodes_[id].width; }
  [[nodiscard]] std::size_t op_count() const noexcept { return ops_.size(); }
  [[nodiscard]] std::size_t leaf_count() const noexcept { return leaves_.size(); }

  /// Re-evaluates every recorded op in order from the stored leaves.
  void replay();

  /// Reverse sweep from the real part of width-1 node `root`. Gradients of
  /// registered phase leaves are accumulated into param_grad[param].
  void backward(NodeId root, std::span<double> param_grad);

 private:
  enum class OpKind : std::uint8_t {
    Cis, Cos, Sin, Add, Mul, Neg, Scale, Abs, Abs2, Softmax, Gather, Log, Mean
  };

  struct Node {
    std::uint32_t offset;
    std::uint32_t width;
  };

  struct Op {
    OpKind kind;
    NodeId out;
    NodeId a;
    NodeId b;
    double param;
    std::uint32_t extra_begin;  // into extra_ (softmax ids, gather rows)
    std::uint32_t extra_count;
  };

  NodeId new_node(std::size_t width);
  NodeId unary(OpKind kind, NodeId a, double param, std::size_t width);
  NodeId binary(OpKind kind, NodeId a, NodeId b);
  void forward_op(const Op& op);
  void backward_op(const Op& op);

  cplx* vals(NodeId id) { return values_.data() + nodes_[id].offset; }
  const cplx* vals(NodeId id) const { return values_.data() + nodes_[id].offset; }
  cplx* adjs(NodeId id) { return adjoints_.data() + nodes_[id].offset; }

  std::size_t batch_;
  std::vector<Node> nodes_;
  std::vector<cplx> values_;
  std::vector<cplx> adjoints_;
  std::vector<Op> ops_;
  std::vector<NodeId> extra_;
  std::vector<std::size_t> gather_index_;
  std::vector<std::pair<std::size_t, NodeId>> leaves_;
  std::vector<std::int64_t> leaf_of_param_;
};

}  // namespace bayesmesh
