#pragma once

#include <string>
#include <vector>

#include "nmsparse/tensor.hpp"

namespace nmsparse {

// Reverse-mode tape over whole-tensor operations. Values are computed
// eagerly as nodes are appended, so construction order is the topological
// order and backward() is a single reverse sweep. One tape serves one
// forward pass and supports exactly one backward.
class Tape {
 public:
  using NodeId = int;

  NodeId leaf(const Tensor& value);  // honors value.requires_grad

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise, equal shapes
  NodeId scale(NodeId a, double s);
  NodeId reshape(NodeId a, Shape s);
  // a[..., K] x b[K, N] -> [..., N]
  NodeId matmul(NodeId a, NodeId b);
  // x[..., K] x w[N, K]^T -> [..., N]
  NodeId linear(NodeId x, NodeId w);
  NodeId gelu(NodeId a);
  // x[..., C], gain[C], bias[C]; normalized over the last dimension
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);
  NodeId softmax(NodeId a);  // over the last dimension
  // table[V, C], ids in [0, V) -> [ids.size(), C]
  NodeId embedding_lookup(NodeId table, std::vector<int> ids);
  // q,k,v [B*T, C]; multi-head causal attention -> [B*T, C]
  NodeId causal_self_attention(NodeId q, NodeId k, NodeId v, int batch, int seq, int heads);
  // logits[N, V], targets[N] -> scalar mean NLL
  NodeId cross_entropy(NodeId logits, std::vector<int> targets);
  NodeId sum_of_squares(NodeId a);  // -> scalar

  void backward(NodeId loss);

  const Tensor& value(NodeId id) const;
  // Gradient of the last backward() w.r.t. this node. Throws if the node
  // does not participate in gradients (frozen leaves never do).
  const Tensor& grad(NodeId id) const;
  bool has_grad(NodeId id) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Reshape,
    MatMul,
    Linear,
    Gelu,
    LayerNorm,
    Softmax,
    Embedding,
    Attention,
    CrossEntropy,
    SumSquares,
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    double scalar = 0.0;
    std::vector<int> ids;      // embedding ids / cross-entropy targets
    Tensor saved, saved2;      // op-specific buffers for backward
    int batch = 0, seq = 0, heads = 0;
  };

  NodeId push(Node&& n);
  const Node& at(NodeId id) const;
  void accumulate(Node& n, const double* src, std::size_t numel);
  void backward_node(int id);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace nmsparse
