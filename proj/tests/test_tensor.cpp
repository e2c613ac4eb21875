#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "iidm/rng.hpp"
#include "iidm/tensor.hpp"

using namespace iidm;

namespace {

// Central finite differences, the independent oracle for every autodiff check.
double fd_derivative(const std::function<double(const std::vector<double>&)>& f,
                     std::vector<double> x, std::size_t i, double h = 1e-5) {
    x[i] += h;
    const double fp = f(x);
    x[i] -= 2 * h;
    const double fm = f(x);
    return (fp - fm) / (2 * h);
}

bool close_rel(double a, double b, double tol) {
    return std::fabs(a - b) <= tol * std::max({1e-6, std::fabs(a), std::fabs(b)});
}

// Exercises one op under the FD oracle: inputs[0] carries the gradient being
// checked; the loss is a fixed random weighting of the op output.
struct FdCase {
    std::string name;
    std::vector<std::vector<std::int64_t>> shapes;
    std::function<Tensor(const std::vector<Tensor>&)> op;
    double kink_margin = 0.0; // push samples away from relu/abs kinks
};

void run_fd_case(const FdCase& c, std::uint64_t seed) {
    Prng rng(seed, "fd." + c.name);
    std::vector<std::vector<double>> inputs;
    for (const auto& shape : c.shapes) {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        std::vector<double> v(static_cast<std::size_t>(n));
        for (auto& x : v) {
            x = rng.normal();
            if (c.kink_margin > 0.0 && std::fabs(x) < c.kink_margin)
                x = x < 0 ? x - c.kink_margin : x + c.kink_margin;
        }
        inputs.push_back(std::move(v));
    }

    auto out_probe = [&](const std::vector<std::vector<double>>& vals) {
        std::vector<Tensor> ts;
        for (std::size_t k = 0; k < vals.size(); ++k)
            ts.push_back(Tensor::from(vals[k], c.shapes[k]));
        return c.op(ts);
    };
    const Tensor probe = out_probe(inputs);
    Prng wrng(seed, "fd.weights." + c.name);
    std::vector<double> wdata(static_cast<std::size_t>(probe.numel()));
    for (auto& x : wdata) x = wrng.normal();
    const Tensor weights = Tensor::from(wdata, probe.shape());

    auto loss_of = [&](const std::vector<std::vector<double>>& vals) {
        return sum_all(mul(out_probe(vals), weights)).item();
    };

    // Autodiff pass with every input trainable.
    std::vector<Tensor> ts;
    for (std::size_t k = 0; k < inputs.size(); ++k)
        ts.push_back(Tensor::from(inputs[k], c.shapes[k], true));
    backward(sum_all(mul(c.op(ts), weights)));

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto grad = ts[k].grad();
        REQUIRE(grad.size() == inputs[k].size());
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            auto f = [&](const std::vector<double>& x) {
                auto vals = inputs;
                vals[k] = x;
                return loss_of(vals);
            };
            const double fd = fd_derivative(f, inputs[k], i);
            INFO(c.name << " input " << k << " element " << i);
            CHECK(close_rel(grad[i], fd, 1e-4));
        }
    }
}

std::vector<FdCase> fd_cases() {
    std::vector<FdCase> cases;
    cases.push_back({"add", {{2, 3}, {2, 3}}, [](const std::vector<Tensor>& t) {
                         return add(t[0], t[1]);
                     }});
    cases.push_back({"sub", {{2, 3}, {2, 3}}, [](const std::vector<Tensor>& t) {
                         return sub(t[0], t[1]);
                     }});
    cases.push_back({"mul", {{2, 3}, {2, 3}}, [](const std::vector<Tensor>& t) {
                         return mul(t[0], t[1]);
                     }});
    cases.push_back({"relu", {{3, 4}}, [](const std::vector<Tensor>& t) { return relu(t[0]); },
                     0.1});
    cases.push_back({"abs", {{3, 4}}, [](const std::vector<Tensor>& t) { return abs(t[0]); },
                     0.1});
    cases.push_back({"square", {{3, 4}}, [](const std::vector<Tensor>& t) {
                         return square(t[0]);
                     }});
    cases.push_back({"scale", {{3, 4}}, [](const std::vector<Tensor>& t) {
                         return scale(t[0], -1.7);
                     }});
    cases.push_back({"matmul", {{3, 4}, {4, 2}}, [](const std::vector<Tensor>& t) {
                         return matmul(t[0], t[1]);
                     }});
    cases.push_back({"transpose2", {{3, 4}}, [](const std::vector<Tensor>& t) {
                         return transpose2(t[0]);
                     }});
    cases.push_back({"add_rowvec", {{3, 4}, {4}}, [](const std::vector<Tensor>& t) {
                         return add_rowvec(t[0], t[1]);
                     }});
    cases.push_back({"softmax_rows", {{3, 4}}, [](const std::vector<Tensor>& t) {
                         return softmax_rows(t[0]);
                     }});
    cases.push_back({"concat_axis0", {{2, 3}, {1, 3}}, [](const std::vector<Tensor>& t) {
                         return concat(t[0], t[1], 0);
                     }});
    cases.push_back({"concat_axis1", {{2, 3}, {2, 2}}, [](const std::vector<Tensor>& t) {
                         return concat(t[0], t[1], 1);
                     }});
    cases.push_back({"slice", {{3, 5}}, [](const std::vector<Tensor>& t) {
                         return slice(t[0], 1, 1, 3);
                     }});
    cases.push_back({"index_rows", {{4, 3}}, [](const std::vector<Tensor>& t) {
                         return index_rows(t[0], {2, 0, 2, 3});
                     }});
    cases.push_back({"reshape", {{2, 6}}, [](const std::vector<Tensor>& t) {
                         return reshape(t[0], {3, 4});
                     }});
    cases.push_back({"conv2d_s1", {{2, 4, 4}, {3, 2, 3, 3}, {3}},
                     [](const std::vector<Tensor>& t) { return conv2d(t[0], t[1], t[2], 1); }});
    cases.push_back({"conv2d_s2", {{2, 5, 6}, {3, 2, 3, 3}, {3}},
                     [](const std::vector<Tensor>& t) { return conv2d(t[0], t[1], t[2], 2); }});
    cases.push_back({"conv2d_1x1", {{3, 4, 4}, {2, 3, 1, 1}, {2}},
                     [](const std::vector<Tensor>& t) { return conv2d(t[0], t[1], t[2], 1); }});
    cases.push_back({"nearest_upsample2", {{2, 3, 3}}, [](const std::vector<Tensor>& t) {
                         return nearest_upsample2(t[0]);
                     }});
    cases.push_back({"avgpool2", {{2, 4, 6}}, [](const std::vector<Tensor>& t) {
                         return avgpool2(t[0]);
                     }});
    cases.push_back({"add_chan_bias", {{3, 2, 2}, {3}}, [](const std::vector<Tensor>& t) {
                         return add_chan_bias(t[0], t[1]);
                     }});
    cases.push_back({"l1_loss", {{2, 4}, {2, 4}},
                     [](const std::vector<Tensor>& t) { return l1_loss(t[0], t[1]); }, 0.1});
    cases.push_back({"mean_all", {{3, 4}}, [](const std::vector<Tensor>& t) {
                         return mean_all(t[0]);
                     }});
    return cases;
}

} // namespace

TEST_CASE("every differentiable primitive matches central finite differences") {
    const auto cases = fd_cases();
    // 100 seeds spread round-robin across the primitive list.
    for (std::uint64_t seed = 0; seed < 100; ++seed)
        run_fd_case(cases[seed % cases.size()], seed);
}

TEST_CASE("backward on sum gives all-ones gradient") {
    Tensor x = Tensor::from({1.0, 2.0, 3.0, 4.0}, {2, 2}, true);
    backward(sum_all(x));
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward on squared norm doubles the input") {
    Tensor x = Tensor::from({1.0, 2.0}, {2}, true);
    backward(sum_all(square(x)));
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("L1-norm subgradient is the sign vector") {
    Tensor x = Tensor::from({-3.0, 5.0}, {2}, true);
    backward(sum_all(abs(x)));
    CHECK(x.grad()[0] == -1.0);
    CHECK(x.grad()[1] == 1.0);
    // Oracle: central differences away from the kink.
    auto f = [](const std::vector<double>& v) { return std::fabs(v[0]) + std::fabs(v[1]); };
    CHECK(close_rel(fd_derivative(f, {-3.0, 5.0}, 0), -1.0, 1e-6));
    CHECK(close_rel(fd_derivative(f, {-3.0, 5.0}, 1), 1.0, 1e-6));
}

TEST_CASE("abs subgradient at zero is zero") {
    Tensor x = Tensor::from({0.0, -2.0}, {2}, true);
    backward(sum_all(abs(x)));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == -1.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::from({1.0, 2.0}, {2}, true);
    CHECK_THROWS_AS(backward(relu(x)), std::invalid_argument);
}

TEST_CASE("second backward without a fresh graph is detected") {
    Tensor x = Tensor::from({1.0, 2.0}, {2}, true);
    Tensor loss = sum_all(square(x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), std::runtime_error);
}

TEST_CASE("gradients accumulate across independent graphs") {
    Tensor x = Tensor::from({2.0}, {1}, true);
    backward(sum_all(square(x)));
    backward(sum_all(square(x)));
    CHECK(x.grad()[0] == doctest::Approx(8.0)); // 4 + 4
}

TEST_CASE("sgd_step applies p <- p - lr*grad and clears grads") {
    SUBCASE("single step") {
        Tensor p = Tensor::scalar(1.0, true);
        p.accumulate_grad(std::vector<double>{2.0});
        std::vector<Tensor> params{p};
        sgd_step(params, 0.1);
        CHECK(p.item() == doctest::Approx(0.8));
        CHECK_FALSE(p.has_grad());
    }
    SUBCASE("zero gradient leaves parameter unchanged") {
        Tensor p = Tensor::scalar(3.0, true);
        p.accumulate_grad(std::vector<double>{0.0});
        std::vector<Tensor> params{p};
        sgd_step(params, 0.5);
        CHECK(p.item() == 3.0);
    }
    SUBCASE("missing grad is a contract error") {
        Tensor p = Tensor::scalar(1.0, true);
        std::vector<Tensor> params{p};
        CHECK_THROWS_AS(sgd_step(params, 0.1), std::invalid_argument);
    }
    SUBCASE("nonpositive lr is a contract error") {
        Tensor p = Tensor::scalar(1.0, true);
        p.accumulate_grad(std::vector<double>{1.0});
        std::vector<Tensor> params{p};
        CHECK_THROWS_AS(sgd_step(params, 0.0), std::invalid_argument);
    }
    SUBCASE("two steps on f(p)=p^2 from p=1, lr=0.25 reach 0.25") {
        Tensor p = Tensor::scalar(1.0, true);
        std::vector<Tensor> params{p};
        for (int i = 0; i < 2; ++i) {
            backward(sum_all(square(p)));
            sgd_step(params, 0.25);
        }
        CHECK(p.item() == doctest::Approx(0.25));
    }
}

TEST_CASE("operations are deterministic for identical inputs") {
    Prng rng_a(7, "det");
    Prng rng_b(7, "det");
    Tensor a1 = Tensor::randn({3, 5}, rng_a);
    Tensor a2 = Tensor::randn({3, 5}, rng_b);
    Tensor r1 = softmax_rows(matmul(a1, transpose2(a1)));
    Tensor r2 = softmax_rows(matmul(a2, transpose2(a2)));
    REQUIRE(r1.numel() == r2.numel());
    for (std::int64_t i = 0; i < r1.numel(); ++i)
        CHECK(r1.data()[static_cast<std::size_t>(i)] == r2.data()[static_cast<std::size_t>(i)]);
}

TEST_CASE("softmax rows sum to one") {
    Prng rng(3, "softmax");
    Tensor a = Tensor::randn({5, 7}, rng, 3.0);
    Tensor s = softmax_rows(a);
    for (int i = 0; i < 5; ++i) {
        double row = 0.0;
        for (int j = 0; j < 7; ++j) row += s.data()[static_cast<std::size_t>(i * 7 + j)];
        CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("conv2d shape handling") {
    Prng rng(1, "conv");
    Tensor x = Tensor::randn({3, 8, 8}, rng);
    Tensor w = Tensor::randn({5, 3, 3, 3}, rng);
    Tensor b = Tensor::zeros({5});
    CHECK(conv2d(x, w, b, 1).shape() == std::vector<std::int64_t>{5, 8, 8});
    CHECK(conv2d(x, w, b, 2).shape() == std::vector<std::int64_t>{5, 4, 4});
    Tensor x7 = Tensor::randn({3, 7, 7}, rng);
    CHECK(conv2d(x7, w, b, 2).shape() == std::vector<std::int64_t>{5, 4, 4});
    Tensor wbad = Tensor::randn({5, 2, 3, 3}, rng);
    CHECK_THROWS_AS(conv2d(x, wbad, b, 1), std::invalid_argument);
    Tensor w5 = Tensor::randn({5, 3, 5, 5}, rng);
    CHECK_THROWS_AS(conv2d(x, w5, b, 1), std::invalid_argument);
}

TEST_CASE("rng streams are label-independent and counter-based") {
    Prng a(42, "alpha");
    Prng a2(42, "alpha");
    Prng b(42, "beta");
    const auto x = a.next_u64();
    CHECK(x == a2.next_u64());
    CHECK(x != b.next_u64());
    // Consuming alpha never changes beta's sequence.
    Prng b2(42, "beta");
    Prng b3(42, "beta");
    (void)Prng(42, "alpha").next_u64();
    CHECK(b2.next_u64() == b3.next_u64());
}
