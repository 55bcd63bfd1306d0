#pragma once

#include <cstdint>
#include <vector>

#include "surgvae/tensor.hpp"

namespace surgvae {

using NodeId = std::int32_t;

/// Eager reverse-mode tape.
///
/// Nodes are appended in evaluation order, so inputs always reference earlier
/// nodes and the graph is acyclic by construction. Values are computed when an
/// op is recorded; backward() walks the tape in reverse from a scalar root and
/// fills per-node gradients. Repeated backward calls reset all gradients first.
///
/// Leaves come in two flavors: input() (participates in differentiation) and
/// constant() (no gradient is ever propagated into it or through paths that
/// depend only on constants).
class Graph {
public:
    enum class Op : std::uint8_t {
        Input, Constant,
        MatMul, Bmm,
        Add, Sub, Mul, AddColVec,
        Exp, Log, Relu, Sigmoid, Tanh, Square, Sqrt, Softplus, Neg,
        Scale, AddScalar, Clamp,
        Sum, Mean, SumAxis, MeanAxis, LogSumExpAxis,
        SoftmaxRows, Reshape, Transpose, SliceCols,
        Tokenize, GaussLogDensity,
    };

    NodeId input(Tensor value);
    NodeId constant(Tensor value);

    /// a[m x k] * b[k x n] -> [m x n].
    NodeId matmul(NodeId a, NodeId b);
    /// Batched matmul over the leading dimension, with optional transposition
    /// of the trailing two dims of either operand. transpose_a && transpose_b
    /// is unsupported.
    NodeId bmm(NodeId a, NodeId b, bool transpose_a = false, bool transpose_b = false);

    /// Binary elementwise ops accept equal shapes, or a rank-2 `a` with a
    /// 1 x n `b` broadcast across rows.
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    /// a[m x n] + col[m x 1] broadcast across columns.
    NodeId add_colvec(NodeId a, NodeId col);

    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId relu(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId tanh(NodeId a);
    NodeId square(NodeId a);
    NodeId sqrt(NodeId a);
    NodeId softplus(NodeId a);
    NodeId neg(NodeId a);
    NodeId scale(NodeId a, double c);
    NodeId add_scalar(NodeId a, double c);
    NodeId clamp(NodeId a, double lo, double hi);

    NodeId sum(NodeId a);
    NodeId mean(NodeId a);
    NodeId sum_axis(NodeId a, int axis);
    NodeId mean_axis(NodeId a, int axis);
    NodeId logsumexp_axis(NodeId a, int axis);

    /// Row-wise softmax of a rank-2 tensor, computed with per-row max
    /// subtraction. Rows are nonnegative and sum to 1 within 1e-12.
    NodeId softmax_rows(NodeId a);

    NodeId reshape(NodeId a, std::vector<std::size_t> shape);
    NodeId transpose(NodeId a);
    NodeId slice_cols(NodeId a, std::size_t lo, std::size_t hi);

    /// Per-feature affine token map: x[n x F], w[F x T], b[F x T] ->
    /// tokens[n x F x T] with tokens[i,f,:] = x[i,f] * w[f,:] + b[f,:].
    NodeId tokenize(NodeId x, NodeId w, NodeId b);

    /// Pairwise diagonal-Gaussian log densities:
    /// out[i,m,j] = log N(z[i,j]; mu[m,j], exp(logvar[m,j])).
    NodeId gauss_log_density(NodeId z, NodeId mu, NodeId logvar);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    /// Gradient of the last backward() root w.r.t. node `id`. Zero tensor if
    /// the root does not depend on it. Valid until the next backward() call.
    const Tensor& grad(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a scalar root. Resets previous gradients.
    void backward(NodeId root);

private:
    struct Node {
        Op op;
        NodeId in0 = -1, in1 = -1, in2 = -1;
        Tensor value;
        bool requires_grad = false;
        // op-specific payload
        double a = 0.0, b = 0.0;
        int axis = -1;
        std::size_t lo = 0, hi = 0;
        bool ta = false, tb = false;
    };

    NodeId push(Node node);
    Tensor& grad_buffer(NodeId id);
    void backprop_node(NodeId id);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    mutable Tensor zero_scratch_;
};

}  // namespace surgvae
