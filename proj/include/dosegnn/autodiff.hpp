#pragma once

#include <array>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dosegnn::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Trainable array owned outside any tape. `grad` accumulates across
/// backward passes until zero_grad().
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Index rows, Index cols)
        : name(std::move(name)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

    std::string name;
    Matrix value;
    Matrix grad;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// tape lives.
class Tensor {
public:
    Tensor() = default;

    const Matrix& value() const;
    /// Gradient from the most recent backward pass (zeros if none reached it).
    Matrix grad() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    std::array<Index, 2> shape() const { return {rows(), cols()}; }
    bool requires_grad() const;

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }

private:
    friend class Tape;
    Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Dynamic reverse-mode tape. Nodes are recorded in evaluation order, so
/// recording order is a topological order and backward walks it in reverse.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf without gradient.
    Tensor constant(Matrix value);
    /// Leaf whose gradient accumulates on the tape across backward calls.
    Tensor variable(Matrix value);
    /// Leaf bound to a Parameter; backward adds into parameter.grad.
    Tensor parameter(Parameter& p);

    /// Populates gradients of every leaf reachable from `loss`, which must be
    /// a 1x1 tensor recorded on this tape.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }

    // Interface for op implementations.
    Tensor record(Matrix value, std::vector<std::size_t> inputs, BackwardFn backward);
    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
    /// Zero-initialized on first access in a pass.
    Matrix& grad_buffer(std::size_t id);
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        bool leaf = true;
        Parameter* param = nullptr;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };
    std::deque<Node> nodes_;
};

// Differentiable operations. Every op checks shapes and throws
// std::invalid_argument naming the op and the offending shapes.

Tensor add(const Tensor& a, const Tensor& b);
/// Elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor matmul(const Tensor& a, const Tensor& b);
/// Column-wise concatenation [a | b]; row counts must match.
Tensor concat(const Tensor& a, const Tensor& b);
/// n x d -> 1 x d.
Tensor mean_rows(const Tensor& a);
/// out.row(v) = mean of a.row(indices[j]) for j in [offsets[v], offsets[v+1]).
/// Every segment must be non-empty. Summation follows index order.
Tensor segment_mean(const Tensor& a, std::span<const std::size_t> offsets, std::span<const std::uint32_t> indices);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);
/// x * W + b with W (in x out) and b (1 x out) broadcast over rows.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Mean of squared differences over all elements.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

/// Single-channel valid 3D cross-correlation.
///   input   n x p^3        (each row a p*p*p patch, x fastest)
///   kernels K x q^3
///   bias    1 x K
///   output  n x K*o^3      with o = p - q + 1, kernel-major then x fastest
Tensor conv3d_valid(const Tensor& input, const Tensor& kernels, const Tensor& bias, int patch_size, int kernel_size);

}  // namespace dosegnn::ad
