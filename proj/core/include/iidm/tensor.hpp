#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "iidm/rng.hpp"

namespace iidm {

/// Dense row-major tensor participating in tape-based reverse-mode autodiff.
///
/// A Tensor is a cheap value-semantic handle onto a shared node. Operations
/// build a computation graph; backward() walks it once in reverse topological
/// order and accumulates gradients into every reachable node that requires
/// them. Data is stored as 64-bit floats internally; 32-bit conversion happens
/// only at file boundaries.
class Tensor {
public:
    struct Node {
        std::vector<std::int64_t> shape;
        std::vector<double> data;
        std::vector<double> grad;            // allocated lazily by backward()
        bool requires_grad = false;
        bool consumed = false;               // tape already walked through here
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn; // empty for leaves

        std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    };

    Tensor() = default;

    // --- construction ---
    static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::int64_t> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<double> data, std::vector<std::int64_t> shape,
                       bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(std::vector<std::int64_t> shape, Prng& rng, double stddev = 1.0,
                        bool requires_grad = false);

    // --- inspection ---
    bool defined() const { return node_ != nullptr; }
    const std::vector<std::int64_t>& shape() const;
    std::int64_t numel() const;
    std::int64_t dim(int axis) const;
    int ndim() const { return static_cast<int>(shape().size()); }
    bool requires_grad() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();          // leaves only; edits bypass the tape
    std::span<const double> grad() const;      // empty until backward populates it
    bool has_grad() const;
    double item() const;                       // scalar tensors only

    void zero_grad();
    void accumulate_grad(std::span<const double> g);
    /// Flips gradient tracking on a leaf (used to freeze trained weights).
    void set_requires_grad(bool value);

    std::shared_ptr<Node> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    std::shared_ptr<Node> node_;

    friend Tensor make_op_result(std::vector<std::int64_t> shape, std::vector<double> data,
                                 std::vector<Tensor> parents,
                                 std::function<void(Tensor::Node&)> backward_fn);
};

/// Runs reverse-mode accumulation from a scalar loss. Throws if the loss is
/// not a scalar or if any part of the graph has already been consumed by a
/// previous backward() call (double accumulation).
void backward(const Tensor& loss);

/// p <- p - lr * grad for every parameter, then clears the grads.
/// Throws if lr <= 0 or any parameter is missing its gradient.
void sgd_step(std::span<Tensor> params, double lr);

// --- elementwise and reduction ops ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_const(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);      // (m,k) x (k,n)
Tensor transpose2(const Tensor& a);                   // 2-D
Tensor add_rowvec(const Tensor& a, const Tensor& b);  // (r,c) + (c)
Tensor softmax_rows(const Tensor& a);                 // row-wise, 2-D

// --- shape ops ---
Tensor reshape(const Tensor& a, std::vector<std::int64_t> shape);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len);
Tensor index_rows(const Tensor& a, const std::vector<std::int64_t>& rows); // 2-D gather

// --- spatial ops on (C,H,W) ---
/// 2-D convolution, kernel 1x1 or 3x3, stride 1 or 2, zero padding k/2.
/// w is (Cout,Cin,k,k); bias (Cout) is optional (pass undefined Tensor).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride);
Tensor nearest_upsample2(const Tensor& x);
Tensor avgpool2(const Tensor& x);
Tensor add_chan_bias(const Tensor& x, const Tensor& b); // (C,H,W) + (C)

/// Mean absolute deviation between same-shape tensors.
Tensor l1_loss(const Tensor& x, const Tensor& gx);

} // namespace iidm
