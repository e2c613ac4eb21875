#include "iidm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <unordered_set>

namespace iidm {

namespace {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor: extents must be positive");
        n *= d;
    }
    return n;
}

void ensure_grad(Tensor::Node& n) {
    if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

} // namespace

Tensor make_op_result(std::vector<std::int64_t> shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(Tensor::Node&)> backward_fn) {
    auto node = std::make_shared<Tensor::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool needs = false;
    for (const auto& p : parents) {
        node->parents.push_back(p.node());
        needs = needs || p.requires_grad();
    }
    node->requires_grad = needs;
    if (needs) node->backward_fn = std::move(backward_fn);
    return Tensor(std::move(node));
}

// --- construction -----------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::vector<double>(static_cast<std::size_t>(n), 0.0), std::move(shape),
                requires_grad);
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::vector<double>(static_cast<std::size_t>(n), value), std::move(shape),
                requires_grad);
}

Tensor Tensor::from(std::vector<double> data, std::vector<std::int64_t> shape,
                    bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw std::invalid_argument("tensor: data size does not match shape");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({value}, {1}, requires_grad);
}

Tensor Tensor::randn(std::vector<std::int64_t> shape, Prng& rng, double stddev,
                     bool requires_grad) {
    const auto n = shape_numel(shape);
    std::vector<double> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = rng.normal() * stddev;
    return from(std::move(data), std::move(shape), requires_grad);
}

// --- inspection --------------------------------------------------------------

const std::vector<std::int64_t>& Tensor::shape() const {
    if (!node_) throw std::logic_error("tensor: undefined");
    return node_->shape;
}

std::int64_t Tensor::numel() const { return node_ ? node_->numel() : 0; }

std::int64_t Tensor::dim(int axis) const {
    const auto& s = shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw std::invalid_argument("tensor: axis out of range");
    return s[static_cast<std::size_t>(axis)];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::data() const {
    if (!node_) throw std::logic_error("tensor: undefined");
    return node_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!node_) throw std::logic_error("tensor: undefined");
    return node_->data;
}

std::span<const double> Tensor::grad() const {
    if (!node_) throw std::logic_error("tensor: undefined");
    return node_->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("tensor: item() needs a scalar");
    return node_->data[0];
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

void Tensor::set_requires_grad(bool value) {
    if (!node_) throw std::logic_error("tensor: undefined");
    if (node_->backward_fn)
        throw std::logic_error("tensor: requires_grad can only be flipped on leaves");
    node_->requires_grad = value;
    if (!value) node_->grad.clear();
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (!node_) throw std::logic_error("tensor: undefined");
    if (static_cast<std::int64_t>(g.size()) != numel())
        throw std::invalid_argument("tensor: gradient size mismatch");
    ensure_grad(*node_);
    for (std::size_t i = 0; i < g.size(); ++i) node_->grad[i] += g[i];
}

// --- backward ----------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a defined scalar tensor");
    if (!loss.requires_grad()) return;

    // Post-order DFS gives us a topological order; we run it reversed.
    std::vector<Tensor::Node*> order;
    std::unordered_set<Tensor::Node*> seen;
    std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Tensor::Node* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* n : order) {
        if (n->backward_fn && n->consumed)
            throw std::runtime_error(
                "backward: double accumulation, this graph was already walked; "
                "rebuild the forward pass before calling backward again");
    }

    ensure_grad(*loss.node());
    loss.node()->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor::Node* n = *it;
        if (!n->backward_fn) continue;
        ensure_grad(*n);
        n->backward_fn(*n);
        n->consumed = true;
    }
}

void sgd_step(std::span<Tensor> params, double lr) {
    if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be > 0");
    for (auto& p : params) {
        if (!p.has_grad())
            throw std::invalid_argument("sgd_step: parameter has no gradient");
    }
    for (auto& p : params) {
        auto d = p.mutable_data();
        auto g = p.grad();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
        p.zero_grad();
    }
}

// --- elementwise -------------------------------------------------------------

namespace {

Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* what,
                          double (*fwd)(double, double),
                          void (*bwd)(double, double, double, double&, double&)) {
    check_same_shape(a, b, what);
    std::vector<double> out(a.data().size());
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(da[i], db[i]);
    auto an = a.node();
    auto bn = b.node();
    return make_op_result(a.shape(), std::move(out), {a, b}, [an, bn, bwd](Tensor::Node& self) {
        const bool na = an->requires_grad;
        const bool nb = bn->requires_grad;
        if (na) ensure_grad(*an);
        if (nb) ensure_grad(*bn);
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            double ga = 0.0, gb = 0.0;
            bwd(an->data[i], bn->data[i], self.grad[i], ga, gb);
            if (na) an->grad[i] += ga;
            if (nb) bn->grad[i] += gb;
        }
    });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double g, double& ga, double& gb) {
            ga = g;
            gb = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double g, double& ga, double& gb) {
            ga = g;
            gb = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& ga, double& gb) {
            ga = g * y;
            gb = g * x;
        });
}

namespace {

Tensor unary_elementwise(const Tensor& a, double (*fwd)(double),
                         double (*bwd)(double, double)) {
    std::vector<double> out(a.data().size());
    auto da = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(da[i]);
    auto an = a.node();
    return make_op_result(a.shape(), std::move(out), {a}, [an, bwd](Tensor::Node& self) {
        ensure_grad(*an);
        for (std::size_t i = 0; i < self.data.size(); ++i)
            an->grad[i] += bwd(an->data[i], self.grad[i]);
    });
}

} // namespace

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.data().size());
    auto da = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * s;
    auto an = a.node();
    return make_op_result(a.shape(), std::move(out), {a}, [an, s](Tensor::Node& self) {
        ensure_grad(*an);
        for (std::size_t i = 0; i < self.data.size(); ++i) an->grad[i] += self.grad[i] * s;
    });
}

Tensor add_const(const Tensor& a, double c) {
    std::vector<double> out(a.data().size());
    auto da = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + c;
    auto an = a.node();
    return make_op_result(a.shape(), std::move(out), {a}, [an](Tensor::Node& self) {
        ensure_grad(*an);
        for (std::size_t i = 0; i < self.data.size(); ++i) an->grad[i] += self.grad[i];
    });
}

Tensor relu(const Tensor& a) {
    return unary_elementwise(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double g) { return x > 0.0 ? g : 0.0; });
}

Tensor abs(const Tensor& a) {
    // Subgradient at zero is defined as 0.
    return unary_elementwise(
        a, [](double x) { return std::fabs(x); },
        [](double x, double g) { return x > 0.0 ? g : (x < 0.0 ? -g : 0.0); });
}

Tensor square(const Tensor& a) {
    return unary_elementwise(
        a, [](double x) { return x * x; }, [](double x, double g) { return 2.0 * x * g; });
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto an = a.node();
    return make_op_result({1}, {s}, {a}, [an](Tensor::Node& self) {
        ensure_grad(*an);
        const double g = self.grad[0];
        for (auto& v : an->grad) v += g;
    });
}

Tensor mean_all(const Tensor& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor l1_loss(const Tensor& x, const Tensor& gx) {
    check_same_shape(x, gx, "l1_loss");
    return mean_all(abs(sub(x, gx)));
}

// --- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: needs (m,k) x (k,n)");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    auto da = a.data();
    auto db = b.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = da[static_cast<std::size_t>(i * k + p)];
            if (av == 0.0) continue;
            const double* brow = &db[static_cast<std::size_t>(p * n)];
            double* orow = &out[static_cast<std::size_t>(i * n)];
            for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    auto an = a.node();
    auto bn = b.node();
    return make_op_result({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Tensor::Node& self) {
        if (an->requires_grad) {
            ensure_grad(*an);
            // dA = dC * B^T
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) {
                    const double g = self.grad[static_cast<std::size_t>(i * n + j)];
                    if (g == 0.0) continue;
                    for (std::int64_t p = 0; p < k; ++p)
                        an->grad[static_cast<std::size_t>(i * k + p)] +=
                            g * bn->data[static_cast<std::size_t>(p * n + j)];
                }
        }
        if (bn->requires_grad) {
            ensure_grad(*bn);
            // dB = A^T * dC
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    const double av = an->data[static_cast<std::size_t>(i * k + p)];
                    if (av == 0.0) continue;
                    const double* grow = &self.grad[static_cast<std::size_t>(i * n)];
                    double* brow = &bn->grad[static_cast<std::size_t>(p * n)];
                    for (std::int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

Tensor transpose2(const Tensor& a) {
    if (a.ndim() != 2) throw std::invalid_argument("transpose2: needs a 2-D tensor");
    const auto r = a.dim(0), c = a.dim(1);
    std::vector<double> out(static_cast<std::size_t>(r * c));
    auto da = a.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            out[static_cast<std::size_t>(j * r + i)] = da[static_cast<std::size_t>(i * c + j)];
    auto an = a.node();
    return make_op_result({c, r}, std::move(out), {a}, [an, r, c](Tensor::Node& self) {
        ensure_grad(*an);
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j)
                an->grad[static_cast<std::size_t>(i * c + j)] +=
                    self.grad[static_cast<std::size_t>(j * r + i)];
    });
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 1 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("add_rowvec: needs (r,c) + (c)");
    const auto r = a.dim(0), c = a.dim(1);
    std::vector<double> out(a.data().size());
    auto da = a.data();
    auto db = b.data();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            out[static_cast<std::size_t>(i * c + j)] =
                da[static_cast<std::size_t>(i * c + j)] + db[static_cast<std::size_t>(j)];
    auto an = a.node();
    auto bn = b.node();
    return make_op_result(a.shape(), std::move(out), {a, b}, [an, bn, r, c](Tensor::Node& self) {
        if (an->requires_grad) {
            ensure_grad(*an);
            for (std::size_t i = 0; i < self.data.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            ensure_grad(*bn);
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j)
                    bn->grad[static_cast<std::size_t>(j)] +=
                        self.grad[static_cast<std::size_t>(i * c + j)];
        }
    });
}

Tensor softmax_rows(const Tensor& a) {
    if (a.ndim() != 2) throw std::invalid_argument("softmax_rows: needs a 2-D tensor");
    const auto r = a.dim(0), c = a.dim(1);
    std::vector<double> out(a.data().size());
    auto da = a.data();
    for (std::int64_t i = 0; i < r; ++i) {
        const double* row = &da[static_cast<std::size_t>(i * c)];
        double* orow = &out[static_cast<std::size_t>(i * c)];
        double mx = row[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (std::int64_t j = 0; j < c; ++j) orow[j] /= sum;
    }
    auto an = a.node();
    return make_op_result(a.shape(), std::move(out), {a}, [an, r, c](Tensor::Node& self) {
        ensure_grad(*an);
        for (std::int64_t i = 0; i < r; ++i) {
            const double* y = &self.data[static_cast<std::size_t>(i * c)];
            const double* gy = &self.grad[static_cast<std::size_t>(i * c)];
            double dot = 0.0;
            for (std::int64_t j = 0; j < c; ++j) dot += gy[j] * y[j];
            double* gx = &an->grad[static_cast<std::size_t>(i * c)];
            for (std::int64_t j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
}

// --- shape ops -----------------------------------------------------------------

Tensor reshape(const Tensor& a, std::vector<std::int64_t> shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    std::vector<double> out(a.data().begin(), a.data().end());
    auto an = a.node();
    return make_op_result(std::move(shape), std::move(out), {a}, [an](Tensor::Node& self) {
        ensure_grad(*an);
        for (std::size_t i = 0; i < self.data.size(); ++i) an->grad[i] += self.grad[i];
    });
}

namespace {

// Row-major split of a shape at `axis` into (outer, at-axis, tail) extents.
void axis_strides(const std::vector<std::int64_t>& shape, int axis, std::int64_t& outer,
                  std::int64_t& mid, std::int64_t& tail) {
    outer = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
    mid = shape[static_cast<std::size_t>(axis)];
    tail = 1;
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
        tail *= shape[i];
}

} // namespace

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    if (a.ndim() != b.ndim())
        throw std::invalid_argument("concat: rank mismatch");
    if (axis < 0 || axis >= a.ndim())
        throw std::invalid_argument("concat: axis out of range");
    for (int i = 0; i < a.ndim(); ++i)
        if (i != axis && a.dim(i) != b.dim(i))
            throw std::invalid_argument("concat: non-axis extents must match");

    std::int64_t outer, ma, tail;
    axis_strides(a.shape(), axis, outer, ma, tail);
    const std::int64_t mb = b.dim(axis);
    auto shape = a.shape();
    shape[static_cast<std::size_t>(axis)] = ma + mb;

    const std::int64_t ablock = ma * tail, bblock = mb * tail;
    std::vector<double> out(static_cast<std::size_t>(outer * (ablock + bblock)));
    auto da = a.data();
    auto db = b.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        std::copy_n(&da[static_cast<std::size_t>(o * ablock)], ablock,
                    &out[static_cast<std::size_t>(o * (ablock + bblock))]);
        std::copy_n(&db[static_cast<std::size_t>(o * bblock)], bblock,
                    &out[static_cast<std::size_t>(o * (ablock + bblock) + ablock)]);
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op_result(std::move(shape), std::move(out), {a, b},
                          [an, bn, outer, ablock, bblock](Tensor::Node& self) {
        const std::int64_t stride = ablock + bblock;
        if (an->requires_grad) {
            ensure_grad(*an);
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < ablock; ++i)
                    an->grad[static_cast<std::size_t>(o * ablock + i)] +=
                        self.grad[static_cast<std::size_t>(o * stride + i)];
        }
        if (bn->requires_grad) {
            ensure_grad(*bn);
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < bblock; ++i)
                    bn->grad[static_cast<std::size_t>(o * bblock + i)] +=
                        self.grad[static_cast<std::size_t>(o * stride + ablock + i)];
        }
    });
}

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len) {
    if (axis < 0 || axis >= a.ndim())
        throw std::invalid_argument("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > a.dim(axis))
        throw std::invalid_argument("slice: range out of bounds");
    std::int64_t outer, mid, tail;
    axis_strides(a.shape(), axis, outer, mid, tail);
    auto shape = a.shape();
    shape[static_cast<std::size_t>(axis)] = len;

    std::vector<double> out(static_cast<std::size_t>(outer * len * tail));
    auto da = a.data();
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(&da[static_cast<std::size_t>((o * mid + start) * tail)], len * tail,
                    &out[static_cast<std::size_t>(o * len * tail)]);
    auto an = a.node();
    return make_op_result(std::move(shape), std::move(out), {a},
                          [an, outer, mid, tail, start, len](Tensor::Node& self) {
        ensure_grad(*an);
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < len * tail; ++i)
                an->grad[static_cast<std::size_t>((o * mid + start) * tail + i)] +=
                    self.grad[static_cast<std::size_t>(o * len * tail + i)];
    });
}

Tensor index_rows(const Tensor& a, const std::vector<std::int64_t>& rows) {
    if (a.ndim() != 2) throw std::invalid_argument("index_rows: needs a 2-D tensor");
    const auto r = a.dim(0), c = a.dim(1);
    for (auto idx : rows)
        if (idx < 0 || idx >= r) throw std::invalid_argument("index_rows: index out of range");
    const auto q = static_cast<std::int64_t>(rows.size());
    std::vector<double> out(static_cast<std::size_t>(q * c));
    auto da = a.data();
    for (std::int64_t i = 0; i < q; ++i)
        std::copy_n(&da[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)] * c)], c,
                    &out[static_cast<std::size_t>(i * c)]);
    auto an = a.node();
    return make_op_result({q, c}, std::move(out), {a}, [an, rows, c](Tensor::Node& self) {
        ensure_grad(*an);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::int64_t j = 0; j < c; ++j)
                an->grad[static_cast<std::size_t>(rows[i] * c + j)] +=
                    self.grad[i * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)];
    });
}

// --- spatial ops -----------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    if (x.ndim() != 3 || w.ndim() != 4)
        throw std::invalid_argument("conv2d: needs x (C,H,W) and w (Cout,Cin,k,k)");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
    const auto cin = x.dim(0), h = x.dim(1), wdt = x.dim(2);
    const auto cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin || w.dim(3) != k) throw std::invalid_argument("conv2d: weight shape");
    if (k != 1 && k != 3) throw std::invalid_argument("conv2d: kernel must be 1x1 or 3x3");
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != cout))
        throw std::invalid_argument("conv2d: bias shape");
    const std::int64_t pad = k / 2;
    const std::int64_t ho = (h + 2 * pad - k) / stride + 1;
    const std::int64_t wo = (wdt + 2 * pad - k) / stride + 1;

    std::vector<double> out(static_cast<std::size_t>(cout * ho * wo), 0.0);
    auto dx = x.data();
    auto dw = w.data();
    for (std::int64_t o = 0; o < cout; ++o) {
        const double bias = b.defined() ? b.data()[static_cast<std::size_t>(o)] : 0.0;
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                double acc = bias;
                for (std::int64_t c = 0; c < cin; ++c)
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                        const std::int64_t iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = &dx[static_cast<std::size_t>((c * h + iy) * wdt)];
                        const double* wrow =
                            &dw[static_cast<std::size_t>(((o * cin + c) * k + ky) * k)];
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const std::int64_t ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= wdt) continue;
                            acc += xrow[ix] * wrow[kx];
                        }
                    }
                out[static_cast<std::size_t>((o * ho + oy) * wo + ox)] = acc;
            }
    }

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.defined() ? b.node() : nullptr;
    std::vector<Tensor> parents = b.defined() ? std::vector<Tensor>{x, w, b}
                                              : std::vector<Tensor>{x, w};
    return make_op_result(
        {cout, ho, wo}, std::move(out), std::move(parents),
        [xn, wn, bn, cin, h, wdt, cout, k, pad, stride, ho, wo](Tensor::Node& self) {
            const bool nx = xn->requires_grad;
            const bool nw = wn->requires_grad;
            const bool nb = bn && bn->requires_grad;
            if (nx) ensure_grad(*xn);
            if (nw) ensure_grad(*wn);
            if (nb) ensure_grad(*bn);
            for (std::int64_t o = 0; o < cout; ++o)
                for (std::int64_t oy = 0; oy < ho; ++oy)
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const double g =
                            self.grad[static_cast<std::size_t>((o * ho + oy) * wo + ox)];
                        if (g == 0.0) continue;
                        if (nb) bn->grad[static_cast<std::size_t>(o)] += g;
                        for (std::int64_t c = 0; c < cin; ++c)
                            for (std::int64_t ky = 0; ky < k; ++ky) {
                                const std::int64_t iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                for (std::int64_t kx = 0; kx < k; ++kx) {
                                    const std::int64_t ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= wdt) continue;
                                    const auto xi =
                                        static_cast<std::size_t>((c * h + iy) * wdt + ix);
                                    const auto wi = static_cast<std::size_t>(
                                        ((o * cin + c) * k + ky) * k + kx);
                                    if (nx) xn->grad[xi] += g * wn->data[wi];
                                    if (nw) wn->grad[wi] += g * xn->data[xi];
                                }
                            }
                    }
        });
}

Tensor nearest_upsample2(const Tensor& x) {
    if (x.ndim() != 3) throw std::invalid_argument("nearest_upsample2: needs (C,H,W)");
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<double> out(static_cast<std::size_t>(c * 4 * h * w));
    auto dx = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) {
                const double v = dx[static_cast<std::size_t>((ch * h + i) * w + j)];
                for (int di = 0; di < 2; ++di)
                    for (int dj = 0; dj < 2; ++dj)
                        out[static_cast<std::size_t>(
                            (ch * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj)] = v;
            }
    auto xn = x.node();
    return make_op_result({c, 2 * h, 2 * w}, std::move(out), {x},
                          [xn, c, h, w](Tensor::Node& self) {
        ensure_grad(*xn);
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t i = 0; i < h; ++i)
                for (std::int64_t j = 0; j < w; ++j) {
                    double g = 0.0;
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj)
                            g += self.grad[static_cast<std::size_t>(
                                (ch * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj)];
                    xn->grad[static_cast<std::size_t>((ch * h + i) * w + j)] += g;
                }
    });
}

Tensor avgpool2(const Tensor& x) {
    if (x.ndim() != 3) throw std::invalid_argument("avgpool2: needs (C,H,W)");
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("avgpool2: spatial extents must be even");
    const auto ho = h / 2, wo = w / 2;
    std::vector<double> out(static_cast<std::size_t>(c * ho * wo));
    auto dx = x.data();
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < ho; ++i)
            for (std::int64_t j = 0; j < wo; ++j) {
                double s = 0.0;
                for (int di = 0; di < 2; ++di)
                    for (int dj = 0; dj < 2; ++dj)
                        s += dx[static_cast<std::size_t>(
                            (ch * h + 2 * i + di) * w + 2 * j + dj)];
                out[static_cast<std::size_t>((ch * ho + i) * wo + j)] = s * 0.25;
            }
    auto xn = x.node();
    return make_op_result({c, ho, wo}, std::move(out), {x}, [xn, c, h, w](Tensor::Node& self) {
        ensure_grad(*xn);
        const auto ho = h / 2, wo = w / 2;
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t i = 0; i < ho; ++i)
                for (std::int64_t j = 0; j < wo; ++j) {
                    const double g =
                        self.grad[static_cast<std::size_t>((ch * ho + i) * wo + j)] * 0.25;
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj)
                            xn->grad[static_cast<std::size_t>(
                                (ch * h + 2 * i + di) * w + 2 * j + dj)] += g;
                }
    });
}

Tensor add_chan_bias(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 3 || b.ndim() != 1 || x.dim(0) != b.dim(0))
        throw std::invalid_argument("add_chan_bias: needs (C,H,W) + (C)");
    const auto c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<double> out(x.data().size());
    auto dx = x.data();
    auto db = b.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const double bias = db[static_cast<std::size_t>(ch)];
        for (std::int64_t i = 0; i < hw; ++i)
            out[static_cast<std::size_t>(ch * hw + i)] =
                dx[static_cast<std::size_t>(ch * hw + i)] + bias;
    }
    auto xn = x.node();
    auto bn = b.node();
    return make_op_result(x.shape(), std::move(out), {x, b}, [xn, bn, c, hw](Tensor::Node& self) {
        if (xn->requires_grad) {
            ensure_grad(*xn);
            for (std::size_t i = 0; i < self.data.size(); ++i) xn->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            ensure_grad(*bn);
            for (std::int64_t ch = 0; ch < c; ++ch) {
                double g = 0.0;
                for (std::int64_t i = 0; i < hw; ++i)
                    g += self.grad[static_cast<std::size_t>(ch * hw + i)];
                bn->grad[static_cast<std::size_t>(ch)] += g;
            }
        }
    });
}

} // namespace iidm
