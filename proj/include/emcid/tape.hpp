#pragma once

#include <cstdint>
#include <vector>

#include "emcid/matrix.hpp"

namespace emcid {

using NodeId = int32_t;

// Reverse-mode gradient tape over Matrix-valued nodes. Nodes are appended
// in execution order, so creation order is a topological order and the
// backward pass walks it strictly in reverse. Single-owner, single-threaded
// per optimization run; the Matrix values it hands out are plain values and
// safe to share read-only.
class GradTape {
 public:
  NodeId constant(Matrix value);
  NodeId leaf(Matrix value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId matmul_nt(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  // value(a) with value(row) added to every row.
  NodeId add_row_broadcast(NodeId a, NodeId row);
  // value(a) with every row multiplied elementwise by value(row).
  NodeId mul_row_broadcast(NodeId a, NodeId row);
  // value(a) with value(delta) (1 x cols) added to row r only.
  NodeId add_at_row(NodeId a, int r, NodeId delta);
  NodeId gather_rows(NodeId table, std::vector<int> indices);
  NodeId gelu(NodeId a);
  // Per-row standardization (zero mean, unit variance, eps inside sqrt).
  NodeId norm_rows(NodeId a, double eps = 1e-5);
  NodeId softmax_rows(NodeId a);
  NodeId select_row(NodeId a, int r);
  NodeId slice_cols(NodeId a, int c0, int c1);
  NodeId concat_cols(const std::vector<NodeId>& parts);
  NodeId concat_rows(const std::vector<NodeId>& parts);
  NodeId sum_sq(NodeId a);  // 1x1
  // Mean negative log softmax likelihood of targets, 1x1.
  NodeId cross_entropy_rows(NodeId logits, std::vector<int> targets);

  const Matrix& value(NodeId id) const { return nodes_[id].value; }
  int num_nodes() const { return int(nodes_.size()); }

  struct BackwardResult {
    // Gradient per requested leaf, aligned with the `leaves` argument.
    std::vector<Matrix> grads;
    // Leaves with no path to the loss; their gradient is exactly zero.
    std::vector<NodeId> disconnected;
  };

  // Gradient of a scalar (1x1) node with respect to the given leaves.
  BackwardResult backward(NodeId loss, const std::vector<NodeId>& leaves) const;

  // Recomputes every node from its inputs and compares bit-exactly with the
  // recorded values. Used by tests to pin the replay invariant.
  bool replay_matches() const;

 private:
  enum class Op : uint8_t {
    Constant, Leaf, MatMul, MatMulNT, Add, Sub, Scale, AddRowBroadcast,
    MulRowBroadcast, AddAtRow, GatherRows, Gelu, NormRows, SoftmaxRows,
    SelectRow, SliceCols, ConcatCols, ConcatRows, SumSq, CrossEntropyRows,
  };

  struct Node {
    Op op;
    Matrix value;
    std::vector<NodeId> inputs;
    std::vector<int> int_args;  // row index / slice bounds / gather indices / targets
    double scalar = 0.0;
    Matrix aux;  // op-specific cache (norm stats, softmax probs)
  };

  NodeId push(Node n);
  Matrix compute(const Node& n, const std::vector<const Matrix*>& in, Matrix* aux) const;

  std::vector<Node> nodes_;
};

}  // namespace emcid
