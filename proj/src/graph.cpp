#include "surgvae/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "surgvae/errors.hpp"

namespace surgvae {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// C[m x n] (+)= A[m x k] * B[k x n]
void gemm_nn(const double* A, const double* B, double* C,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(C, C + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = A + i * k;
        double* c_row = C + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double a = a_row[l];
            if (a == 0.0) continue;
            const double* b_row = B + l * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_nt(const double* A, const double* B, double* C,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = A + i * k;
        double* c_row = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* b_row = B + j * k;
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += a_row[l] * b_row[l];
            if (accumulate) c_row[j] += acc;
            else c_row[j] = acc;
        }
    }
}

// C[m x n] (+)= A[k x m]^T * B[k x n]
void gemm_tn(const double* A, const double* B, double* C,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(C, C + m * n, 0.0);
    for (std::size_t l = 0; l < k; ++l) {
        const double* a_row = A + l * m;
        const double* b_row = B + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double a = a_row[i];
            if (a == 0.0) continue;
            double* c_row = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_scalar(double x) {
    // log(1 + e^x), stable for both tails.
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

// Decomposes shape around `axis` into (outer, extent, inner) so that flat
// index = (o * extent + e) * inner + i.
void axis_split(const std::vector<std::size_t>& shape, int axis,
                std::size_t& outer, std::size_t& extent, std::size_t& inner) {
    outer = 1;
    for (int d = 0; d < axis; ++d) outer *= shape[static_cast<std::size_t>(d)];
    extent = shape[static_cast<std::size_t>(axis)];
    inner = 1;
    for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shape.size(); ++d) inner *= shape[d];
}

std::vector<std::size_t> drop_axis(const std::vector<std::size_t>& shape, int axis) {
    std::vector<std::size_t> out;
    for (std::size_t d = 0; d < shape.size(); ++d) {
        if (static_cast<int>(d) != axis) out.push_back(shape[d]);
    }
    if (out.empty()) out.push_back(1);
    return out;
}

}  // namespace

NodeId Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(Tensor value) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    n.requires_grad = false;
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
        throw DimensionError("matmul shape mismatch: " + A.shape_str() + " x " + B.shape_str());
    }
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    std::vector<double> out(m * n);
    gemm_nn(A.data(), B.data(), out.data(), m, k, n, false);
    Node node;
    node.op = Op::MatMul;
    node.in0 = a;
    node.in1 = b;
    node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    node.value = Tensor({m, n}, std::move(out));
    return push(std::move(node));
}

NodeId Graph::bmm(NodeId a, NodeId b, bool transpose_a, bool transpose_b) {
    if (transpose_a && transpose_b) throw UsageError("bmm: transposing both operands is unsupported");
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0)) {
        throw DimensionError("bmm shape mismatch: " + A.shape_str() + " x " + B.shape_str());
    }
    const std::size_t batch = A.dim(0);
    const std::size_t m = transpose_a ? A.dim(2) : A.dim(1);
    const std::size_t ka = transpose_a ? A.dim(1) : A.dim(2);
    const std::size_t kb = transpose_b ? B.dim(2) : B.dim(1);
    const std::size_t n = transpose_b ? B.dim(1) : B.dim(2);
    if (ka != kb) {
        throw DimensionError("bmm inner dimension mismatch: " + A.shape_str() + " x " + B.shape_str());
    }
    std::vector<double> out(batch * m * n);
    const std::size_t sa = A.dim(1) * A.dim(2), sb = B.dim(1) * B.dim(2);
    for (std::size_t s = 0; s < batch; ++s) {
        const double* As = A.data() + s * sa;
        const double* Bs = B.data() + s * sb;
        double* Cs = out.data() + s * m * n;
        if (!transpose_a && !transpose_b) gemm_nn(As, Bs, Cs, m, ka, n, false);
        else if (!transpose_a && transpose_b) gemm_nt(As, Bs, Cs, m, ka, n, false);
        else gemm_tn(As, Bs, Cs, m, ka, n, false);
    }
    Node node;
    node.op = Op::Bmm;
    node.in0 = a;
    node.in1 = b;
    node.ta = transpose_a;
    node.tb = transpose_b;
    node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    node.value = Tensor({batch, m, n}, std::move(out));
    return push(std::move(node));
}

namespace {
enum class BinKind { Equal, RowBroadcast };
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    std::vector<double> out(A.numel());
    if (A.same_shape(B)) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
    } else if (A.rank() == 2 && B.rank() == 2 && B.dim(0) == 1 && B.dim(1) == A.dim(1)) {
        const std::size_t m = A.dim(0), n = A.dim(1);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A.at(i, j) + B[j];
    } else {
        throw DimensionError("add shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
    }
    Node node;
    node.op = Op::Add;
    node.in0 = a;
    node.in1 = b;
    node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    node.value = Tensor(A.shape(), std::move(out));
    return push(std::move(node));
}

NodeId Graph::sub(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    std::vector<double> out(A.numel());
    if (A.same_shape(B)) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
    } else if (A.rank() == 2 && B.rank() == 2 && B.dim(0) == 1 && B.dim(1) == A.dim(1)) {
        const std::size_t m = A.dim(0), n = A.dim(1);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A.at(i, j) - B[j];
    } else {
        throw DimensionError("sub shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
    }
    Node node;
    node.op = Op::Sub;
    node.in0 = a;
    node.in1 = b;
    node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    node.value = Tensor(A.shape(), std::move(out));
    return push(std::move(node));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].value;
    const Tensor& B = nodes_[b].value;
    std::vector<double> out(A.numel());
    if (A.same_shape(B)) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
    } else if (A.rank() == 2 && B.rank() == 2 && B.dim(0) == 1 && B.dim(1) == A.dim(1)) {
        const std::size_t m = A.dim(0), n = A.dim(1);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A.at(i, j) * B[j];
    } else {
        throw DimensionError("mul shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
    }
    Node node;
    node.op = Op::Mul;
    node.in0 = a;
    node.in1 = b;
    node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    node.value = Tensor(A.shape(), std::move(out));
    return push(std::move(node));
}

NodeId Graph::add_colvec(NodeId a, NodeId col) {
    const Tensor& A = nodes_[a].value;
    const Tensor& C = nodes_[col].value;
    if (A.rank() != 2 || C.rank() != 2 || C.dim(1) != 1 || C.dim(0) != A.dim(0)) {
        throw DimensionError("add_colvec shape mismatch: " + A.shape_str() + " vs " + C.shape_str());
    }
    const std::size_t m = A.dim(0), n = A.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double c = C[i];
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A.at(i, j) + c;
    }
    Node node;
    node.op = Op::AddColVec;
    node.in0 = a;
    node.in1 = col;
    node.requires_grad = nodes_[a].requires_grad || nodes_[col].requires_grad;
    node.value = Tensor({m, n}, std::move(out));
    return push(std::move(node));
}

#define SURGVAE_UNARY(NAME, OP, EXPR)                                          \
    NodeId Graph::NAME(NodeId a) {                                             \
        const Tensor& A = nodes_[a].value;                                     \
        std::vector<double> out(A.numel());                                    \
        for (std::size_t i = 0; i < out.size(); ++i) {                         \
            const double x = A[i];                                             \
            out[i] = (EXPR);                                                   \
        }                                                                      \
        Node node;                                                             \
        node.op = Op::OP;                                                      \
        node.in0 = a;                                                          \
        node.requires_grad = nodes_[a].requires_grad;                          \
        node.value = Tensor(A.shape(), std::move(out));                        \
        return push(std::move(node));                                          \
    }

SURGVAE_UNARY(exp, Exp, std::exp(x))
SURGVAE_UNARY(relu, Relu, x > 0.0 ? x : 0.0)
SURGVAE_UNARY(sigmoid, Sigmoid, sigmoid_scalar(x))
SURGVAE_UNARY(tanh, Tanh, std::tanh(x))
SURGVAE_UNARY(square, Square, x * x)
SURGVAE_UNARY(softplus, Softplus, softplus_scalar(x))
SURGVAE_UNARY(neg, Neg, -x)
#undef SURGVAE_UNARY

NodeId Graph::log(NodeId a) {
    const Tensor& A = nodes_[a].value;
    std::vector<double> out(A.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (A[i] <= 0.0) {
            throw DomainError("log of non-positive entry " + std::to_string(A[i]) +
                              " at flat index " + std::to_string(i));
        }
        out[i] = std::log(A[i]);
    }
    Node node;
    node.op = Op::Log;
    node.in0 = a;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor(A.shape(), std::move(out));
    return push(std::move(node));
}

NodeId Graph::sqrt(NodeId a) {
    const Tensor& A = nodes_[a].value;
    std::vector<double> out(A.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (A[i] < 0.0) {
            throw DomainError("sqrt of negative entry " + std::to_string(A[i]) +
                              " at flat index " + std::to_string(i));
        }
        out[i] = std::sqrt(A[i]);
    }
    Node node;
    node.op = Op::Sqrt;
    node.in0 = a;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor(A.shape(), std::move(out));
    return push(std::move(node));
}

NodeId Graph::scale(NodeId a, double c) {
    const Tensor& A = nodes_[a].value;
    std::vector<double> out(A.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * A[i];
    Node node;
    node.op = Op::Scale;
    node.in0 = a;
    node.a = c;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor(A.shape(), std::move(out));
    return push(std::move(node));
}

NodeId Graph::add_scalar(NodeId a, double c) {
    const Tensor& A = nodes_[a].value;
    std::vector<double> out(A.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + c;
    Node node;
    node.op = Op::AddScalar;
    node.in0 = a;
    node.a = c;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor(A.shape(), std::move(out));
    return push(std::move(node));
}

NodeId Graph::clamp(NodeId a, double lo, double hi) {
    const Tensor& A = nodes_[a].value;
    std::vector<double> out(A.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, A[i]));
    Node node;
    node.op = Op::Clamp;
    node.in0 = a;
    node.a = lo;
    node.b = hi;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor(A.shape(), std::move(out));
    return push(std::move(node));
}

NodeId Graph::sum(NodeId a) {
    const Tensor& A = nodes_[a].value;
    double acc = 0.0;
    for (std::size_t i = 0; i < A.numel(); ++i) acc += A[i];
    Node node;
    node.op = Op::Sum;
    node.in0 = a;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor::scalar(acc);
    return push(std::move(node));
}

NodeId Graph::mean(NodeId a) {
    const Tensor& A = nodes_[a].value;
    double acc = 0.0;
    for (std::size_t i = 0; i < A.numel(); ++i) acc += A[i];
    Node node;
    node.op = Op::Mean;
    node.in0 = a;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor::scalar(acc / static_cast<double>(A.numel()));
    return push(std::move(node));
}

NodeId Graph::sum_axis(NodeId a, int axis) {
    const Tensor& A = nodes_[a].value;
    if (axis < 0 || static_cast<std::size_t>(axis) >= A.rank()) {
        throw DimensionError("sum_axis: axis " + std::to_string(axis) +
                             " out of range for shape " + A.shape_str());
    }
    std::size_t outer, extent, inner;
    axis_split(A.shape(), axis, outer, extent, inner);
    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t e = 0; e < extent; ++e) {
            const double* src = A.data() + (o * extent + e) * inner;
            double* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    Node node;
    node.op = Op::SumAxis;
    node.in0 = a;
    node.axis = axis;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor(drop_axis(A.shape(), axis), std::move(out));
    return push(std::move(node));
}

NodeId Graph::mean_axis(NodeId a, int axis) {
    const Tensor& A = nodes_[a].value;
    if (axis < 0 || static_cast<std::size_t>(axis) >= A.rank()) {
        throw DimensionError("mean_axis: axis " + std::to_string(axis) +
                             " out of range for shape " + A.shape_str());
    }
    std::size_t outer, extent, inner;
    axis_split(A.shape(), axis, outer, extent, inner);
    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t e = 0; e < extent; ++e) {
            const double* src = A.data() + (o * extent + e) * inner;
            double* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    const double inv = 1.0 / static_cast<double>(extent);
    for (double& v : out) v *= inv;
    Node node;
    node.op = Op::MeanAxis;
    node.in0 = a;
    node.axis = axis;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor(drop_axis(A.shape(), axis), std::move(out));
    return push(std::move(node));
}

NodeId Graph::logsumexp_axis(NodeId a, int axis) {
    const Tensor& A = nodes_[a].value;
    if (axis < 0 || static_cast<std::size_t>(axis) >= A.rank()) {
        throw DimensionError("logsumexp_axis: axis " + std::to_string(axis) +
                             " out of range for shape " + A.shape_str());
    }
    std::size_t outer, extent, inner;
    axis_split(A.shape(), axis, outer, extent, inner);
    std::vector<double> out(outer * inner);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            double mx = -1e308;
            for (std::size_t e = 0; e < extent; ++e)
                mx = std::max(mx, A[(o * extent + e) * inner + i]);
            double acc = 0.0;
            for (std::size_t e = 0; e < extent; ++e)
                acc += std::exp(A[(o * extent + e) * inner + i] - mx);
            out[o * inner + i] = mx + std::log(acc);
        }
    }
    Node node;
    node.op = Op::LogSumExpAxis;
    node.in0 = a;
    node.axis = axis;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor(drop_axis(A.shape(), axis), std::move(out));
    return push(std::move(node));
}

NodeId Graph::softmax_rows(NodeId a) {
    const Tensor& A = nodes_[a].value;
    if (A.rank() != 2) throw DimensionError("softmax_rows expects rank-2, got " + A.shape_str());
    const std::size_t m = A.dim(0), n = A.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = A.data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(row[j] - mx);
            out[i * n + j] = e;
            acc += e;
        }
        const double inv = 1.0 / acc;
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= inv;
    }
    Node node;
    node.op = Op::SoftmaxRows;
    node.in0 = a;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor({m, n}, std::move(out));
    return push(std::move(node));
}

NodeId Graph::reshape(NodeId a, std::vector<std::size_t> shape) {
    const Tensor& A = nodes_[a].value;
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != A.numel()) {
        throw DimensionError("reshape " + A.shape_str() + " -> " + shape_to_string(shape) +
                             " changes element count");
    }
    Node node;
    node.op = Op::Reshape;
    node.in0 = a;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor(std::move(shape), A.vec());
    return push(std::move(node));
}

NodeId Graph::transpose(NodeId a) {
    const Tensor& A = nodes_[a].value;
    if (A.rank() != 2) throw DimensionError("transpose expects rank-2, got " + A.shape_str());
    const std::size_t m = A.dim(0), n = A.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A.at(i, j);
    Node node;
    node.op = Op::Transpose;
    node.in0 = a;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor({n, m}, std::move(out));
    return push(std::move(node));
}

NodeId Graph::slice_cols(NodeId a, std::size_t lo, std::size_t hi) {
    const Tensor& A = nodes_[a].value;
    if (A.rank() != 2 || lo >= hi || hi > A.dim(1)) {
        throw DimensionError("slice_cols [" + std::to_string(lo) + "," + std::to_string(hi) +
                             ") invalid for shape " + A.shape_str());
    }
    const std::size_t m = A.dim(0), w = hi - lo;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = A.at(i, lo + j);
    Node node;
    node.op = Op::SliceCols;
    node.in0 = a;
    node.lo = lo;
    node.hi = hi;
    node.requires_grad = nodes_[a].requires_grad;
    node.value = Tensor({m, w}, std::move(out));
    return push(std::move(node));
}

NodeId Graph::tokenize(NodeId x, NodeId w, NodeId b) {
    const Tensor& X = nodes_[x].value;
    const Tensor& W = nodes_[w].value;
    const Tensor& B = nodes_[b].value;
    if (X.rank() != 2 || W.rank() != 2 || !W.same_shape(B) || W.dim(0) != X.dim(1)) {
        throw DimensionError("tokenize shape mismatch: x " + X.shape_str() + ", w " +
                             W.shape_str() + ", b " + B.shape_str());
    }
    const std::size_t n = X.dim(0), f = X.dim(1), t = W.dim(1);
    std::vector<double> out(n * f * t);
    for (std::size_t i = 0; i < n; ++i) {
        const double* x_row = X.data() + i * f;
        double* o_base = out.data() + i * f * t;
        for (std::size_t ff = 0; ff < f; ++ff) {
            const double xv = x_row[ff];
            const double* w_row = W.data() + ff * t;
            const double* b_row = B.data() + ff * t;
            double* o_row = o_base + ff * t;
            for (std::size_t tt = 0; tt < t; ++tt) o_row[tt] = xv * w_row[tt] + b_row[tt];
        }
    }
    Node node;
    node.op = Op::Tokenize;
    node.in0 = x;
    node.in1 = w;
    node.in2 = b;
    node.requires_grad =
        nodes_[x].requires_grad || nodes_[w].requires_grad || nodes_[b].requires_grad;
    node.value = Tensor({n, f, t}, std::move(out));
    return push(std::move(node));
}

NodeId Graph::gauss_log_density(NodeId z, NodeId mu, NodeId logvar) {
    const Tensor& Z = nodes_[z].value;
    const Tensor& M = nodes_[mu].value;
    const Tensor& L = nodes_[logvar].value;
    if (Z.rank() != 2 || !Z.same_shape(M) || !Z.same_shape(L)) {
        throw DimensionError("gauss_log_density shape mismatch: z " + Z.shape_str() + ", mu " +
                             M.shape_str() + ", logvar " + L.shape_str());
    }
    const std::size_t n = Z.dim(0), d = Z.dim(1);
    std::vector<double> inv_var(n * d);
    for (std::size_t i = 0; i < n * d; ++i) inv_var[i] = std::exp(-L[i]);
    std::vector<double> out(n * n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* z_row = Z.data() + i * d;
        double* o_base = out.data() + i * n * d;
        for (std::size_t m = 0; m < n; ++m) {
            const double* mu_row = M.data() + m * d;
            const double* lv_row = L.data() + m * d;
            const double* iv_row = inv_var.data() + m * d;
            double* o_row = o_base + m * d;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = z_row[j] - mu_row[j];
                o_row[j] = -0.5 * (kLog2Pi + lv_row[j] + diff * diff * iv_row[j]);
            }
        }
    }
    Node node;
    node.op = Op::GaussLogDensity;
    node.in0 = z;
    node.in1 = mu;
    node.in2 = logvar;
    node.requires_grad =
        nodes_[z].requires_grad || nodes_[mu].requires_grad || nodes_[logvar].requires_grad;
    node.value = Tensor({n, n, d}, std::move(out));
    return push(std::move(node));
}

const Tensor& Graph::grad(NodeId id) const {
    if (static_cast<std::size_t>(id) < grads_.size() && grads_[id].numel() > 0) return grads_[id];
    zero_scratch_ = Tensor::zeros(nodes_[id].value.shape());
    return zero_scratch_;
}

Tensor& Graph::grad_buffer(NodeId id) {
    if (grads_[id].numel() == 0) grads_[id] = Tensor::zeros(nodes_[id].value.shape());
    return grads_[id];
}

void Graph::backward(NodeId root) {
    if (nodes_[root].value.numel() != 1) {
        throw UsageError("backward root must be scalar, got shape " +
                         nodes_[root].value.shape_str());
    }
    grads_.clear();
    grads_.resize(nodes_.size());
    if (!nodes_[root].requires_grad) return;  // nothing depends on an input
    grad_buffer(root)[0] = 1.0;
    for (NodeId id = root; id >= 0; --id) {
        if (!nodes_[id].requires_grad) continue;
        if (grads_[id].numel() == 0) continue;  // not reachable from root
        backprop_node(id);
    }
}

void Graph::backprop_node(NodeId id) {
    const Node& node = nodes_[id];
    const Tensor& G = grads_[id];
    const Tensor& V = node.value;
    auto wants = [&](NodeId in) { return in >= 0 && nodes_[in].requires_grad; };

    switch (node.op) {
        case Op::Input:
        case Op::Constant:
            return;
        case Op::MatMul: {
            const Tensor& A = nodes_[node.in0].value;
            const Tensor& B = nodes_[node.in1].value;
            const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
            if (wants(node.in0))
                gemm_nt(G.data(), B.data(), grad_buffer(node.in0).data(), m, n, k, true);
            if (wants(node.in1))
                gemm_tn(A.data(), G.data(), grad_buffer(node.in1).data(), k, m, n, true);
            return;
        }
        case Op::Bmm: {
            const Tensor& A = nodes_[node.in0].value;
            const Tensor& B = nodes_[node.in1].value;
            const std::size_t batch = A.dim(0);
            const std::size_t sa = A.dim(1) * A.dim(2), sb = B.dim(1) * B.dim(2);
            const std::size_t m = V.dim(1), n = V.dim(2);
            const std::size_t k = node.ta ? A.dim(1) : A.dim(2);
            double* dA = wants(node.in0) ? grad_buffer(node.in0).data() : nullptr;
            double* dB = wants(node.in1) ? grad_buffer(node.in1).data() : nullptr;
            for (std::size_t s = 0; s < batch; ++s) {
                const double* As = A.data() + s * sa;
                const double* Bs = B.data() + s * sb;
                const double* Gs = G.data() + s * m * n;
                if (!node.ta && !node.tb) {
                    if (dA) gemm_nt(Gs, Bs, dA + s * sa, m, n, k, true);
                    if (dB) gemm_tn(As, Gs, dB + s * sb, k, m, n, true);
                } else if (!node.ta && node.tb) {
                    // C = A * B^T
                    if (dA) gemm_nn(Gs, Bs, dA + s * sa, m, n, k, true);
                    if (dB) gemm_tn(Gs, As, dB + s * sb, n, m, k, true);
                } else {
                    // C = A^T * B, A stored [k x m]
                    if (dA) gemm_nt(Bs, Gs, dA + s * sa, k, n, m, true);
                    if (dB) gemm_nn(As, Gs, dB + s * sb, k, m, n, true);
                }
            }
            return;
        }
        case Op::Add:
        case Op::Sub: {
            const double sign = node.op == Op::Sub ? -1.0 : 1.0;
            if (wants(node.in0)) {
                Tensor& dA = grad_buffer(node.in0);
                for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += G[i];
            }
            if (wants(node.in1)) {
                Tensor& dB = grad_buffer(node.in1);
                if (dB.numel() == G.numel()) {
                    for (std::size_t i = 0; i < G.numel(); ++i) dB[i] += sign * G[i];
                } else {  // row broadcast: reduce over rows
                    const std::size_t n = dB.numel();
                    const std::size_t m = G.numel() / n;
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) dB[j] += sign * G[i * n + j];
                }
            }
            return;
        }
        case Op::Mul: {
            const Tensor& A = nodes_[node.in0].value;
            const Tensor& B = nodes_[node.in1].value;
            const bool broadcast = !A.same_shape(B);
            if (wants(node.in0)) {
                Tensor& dA = grad_buffer(node.in0);
                if (!broadcast) {
                    for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += G[i] * B[i];
                } else {
                    const std::size_t n = B.numel();
                    const std::size_t m = G.numel() / n;
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) dA[i * n + j] += G[i * n + j] * B[j];
                }
            }
            if (wants(node.in1)) {
                Tensor& dB = grad_buffer(node.in1);
                if (!broadcast) {
                    for (std::size_t i = 0; i < G.numel(); ++i) dB[i] += G[i] * A[i];
                } else {
                    const std::size_t n = B.numel();
                    const std::size_t m = G.numel() / n;
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) dB[j] += G[i * n + j] * A[i * n + j];
                }
            }
            return;
        }
        case Op::AddColVec: {
            if (wants(node.in0)) {
                Tensor& dA = grad_buffer(node.in0);
                for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += G[i];
            }
            if (wants(node.in1)) {
                Tensor& dC = grad_buffer(node.in1);
                const std::size_t m = V.dim(0), n = V.dim(1);
                for (std::size_t i = 0; i < m; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j];
                    dC[i] += acc;
                }
            }
            return;
        }
        case Op::Exp: {
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += G[i] * V[i];
            return;
        }
        case Op::Log: {
            const Tensor& A = nodes_[node.in0].value;
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += G[i] / A[i];
            return;
        }
        case Op::Relu: {
            const Tensor& A = nodes_[node.in0].value;
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i)
                if (A[i] > 0.0) dA[i] += G[i];
            return;
        }
        case Op::Sigmoid: {
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += G[i] * V[i] * (1.0 - V[i]);
            return;
        }
        case Op::Tanh: {
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += G[i] * (1.0 - V[i] * V[i]);
            return;
        }
        case Op::Square: {
            const Tensor& A = nodes_[node.in0].value;
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += 2.0 * A[i] * G[i];
            return;
        }
        case Op::Sqrt: {
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i)
                dA[i] += G[i] * 0.5 / std::max(V[i], 1e-12);
            return;
        }
        case Op::Softplus: {
            const Tensor& A = nodes_[node.in0].value;
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += G[i] * sigmoid_scalar(A[i]);
            return;
        }
        case Op::Neg: {
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i) dA[i] -= G[i];
            return;
        }
        case Op::Scale: {
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += node.a * G[i];
            return;
        }
        case Op::AddScalar: {
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += G[i];
            return;
        }
        case Op::Clamp: {
            const Tensor& A = nodes_[node.in0].value;
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i)
                if (A[i] > node.a && A[i] < node.b) dA[i] += G[i];
            return;
        }
        case Op::Sum: {
            Tensor& dA = grad_buffer(node.in0);
            const double g = G[0];
            for (std::size_t i = 0; i < dA.numel(); ++i) dA[i] += g;
            return;
        }
        case Op::Mean: {
            Tensor& dA = grad_buffer(node.in0);
            const double g = G[0] / static_cast<double>(dA.numel());
            for (std::size_t i = 0; i < dA.numel(); ++i) dA[i] += g;
            return;
        }
        case Op::SumAxis:
        case Op::MeanAxis: {
            const Tensor& A = nodes_[node.in0].value;
            Tensor& dA = grad_buffer(node.in0);
            std::size_t outer, extent, inner;
            axis_split(A.shape(), node.axis, outer, extent, inner);
            const double factor =
                node.op == Op::MeanAxis ? 1.0 / static_cast<double>(extent) : 1.0;
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t e = 0; e < extent; ++e) {
                    double* dst = dA.data() + (o * extent + e) * inner;
                    const double* src = G.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += factor * src[i];
                }
            return;
        }
        case Op::LogSumExpAxis: {
            const Tensor& A = nodes_[node.in0].value;
            Tensor& dA = grad_buffer(node.in0);
            std::size_t outer, extent, inner;
            axis_split(A.shape(), node.axis, outer, extent, inner);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t e = 0; e < extent; ++e) {
                    double* dst = dA.data() + (o * extent + e) * inner;
                    const double* a_src = A.data() + (o * extent + e) * inner;
                    const double* v_src = V.data() + o * inner;
                    const double* g_src = G.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i)
                        dst[i] += g_src[i] * std::exp(a_src[i] - v_src[i]);
                }
            return;
        }
        case Op::SoftmaxRows: {
            Tensor& dA = grad_buffer(node.in0);
            const std::size_t m = V.dim(0), n = V.dim(1);
            for (std::size_t i = 0; i < m; ++i) {
                const double* s = V.data() + i * n;
                const double* g = G.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += s[j] * g[j];
                double* d = dA.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) d[j] += s[j] * (g[j] - dot);
            }
            return;
        }
        case Op::Reshape: {
            Tensor& dA = grad_buffer(node.in0);
            for (std::size_t i = 0; i < G.numel(); ++i) dA[i] += G[i];
            return;
        }
        case Op::Transpose: {
            Tensor& dA = grad_buffer(node.in0);
            const std::size_t n = V.dim(0), m = V.dim(1);  // V is n x m, A is m x n
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) dA[j * n + i] += G[i * m + j];
            return;
        }
        case Op::SliceCols: {
            Tensor& dA = grad_buffer(node.in0);
            const std::size_t m = V.dim(0), w = V.dim(1);
            const std::size_t n = nodes_[node.in0].value.dim(1);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) dA[i * n + node.lo + j] += G[i * w + j];
            return;
        }
        case Op::Tokenize: {
            const Tensor& X = nodes_[node.in0].value;
            const Tensor& W = nodes_[node.in1].value;
            const std::size_t n = X.dim(0), f = X.dim(1), t = W.dim(1);
            double* dX = wants(node.in0) ? grad_buffer(node.in0).data() : nullptr;
            double* dW = wants(node.in1) ? grad_buffer(node.in1).data() : nullptr;
            double* dB = wants(node.in2) ? grad_buffer(node.in2).data() : nullptr;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t ff = 0; ff < f; ++ff) {
                    const double* g_row = G.data() + (i * f + ff) * t;
                    const double xv = X[i * f + ff];
                    const double* w_row = W.data() + ff * t;
                    double acc_x = 0.0;
                    for (std::size_t tt = 0; tt < t; ++tt) {
                        const double g = g_row[tt];
                        acc_x += g * w_row[tt];
                        if (dW) dW[ff * t + tt] += g * xv;
                        if (dB) dB[ff * t + tt] += g;
                    }
                    if (dX) dX[i * f + ff] += acc_x;
                }
            }
            return;
        }
        case Op::GaussLogDensity: {
            const Tensor& Z = nodes_[node.in0].value;
            const Tensor& M = nodes_[node.in1].value;
            const Tensor& L = nodes_[node.in2].value;
            const std::size_t n = Z.dim(0), d = Z.dim(1);
            std::vector<double> inv_var(n * d);
            for (std::size_t i = 0; i < n * d; ++i) inv_var[i] = std::exp(-L[i]);
            double* dZ = wants(node.in0) ? grad_buffer(node.in0).data() : nullptr;
            double* dM = wants(node.in1) ? grad_buffer(node.in1).data() : nullptr;
            double* dL = wants(node.in2) ? grad_buffer(node.in2).data() : nullptr;
            for (std::size_t i = 0; i < n; ++i) {
                const double* z_row = Z.data() + i * d;
                for (std::size_t m = 0; m < n; ++m) {
                    const double* mu_row = M.data() + m * d;
                    const double* iv_row = inv_var.data() + m * d;
                    const double* g_row = G.data() + (i * n + m) * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double g = g_row[j];
                        if (g == 0.0) continue;
                        const double diff = z_row[j] - mu_row[j];
                        const double scaled = diff * iv_row[j];
                        if (dZ) dZ[i * d + j] += g * (-scaled);
                        if (dM) dM[m * d + j] += g * scaled;
                        if (dL) dL[m * d + j] += g * 0.5 * (diff * scaled - 1.0);
                    }
                }
            }
            return;
        }
    }
}

}  // namespace surgvae
