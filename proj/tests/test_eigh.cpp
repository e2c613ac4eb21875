#include "doctest.h"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "iidm/eigh.hpp"
#include "iidm/rng.hpp"

using namespace iidm;

namespace {

double reconstruction_inf_norm(const std::vector<double>& m, const SymSpectrum& s) {
    const int n = s.n;
    double worst = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double v = 0.0;
            for (int k = 0; k < n; ++k) v += s.vec(i, k) * s.eigenvalues[static_cast<std::size_t>(k)] * s.vec(j, k);
            worst = std::max(worst, std::fabs(v - m[static_cast<std::size_t>(i) * n + j]));
        }
    return worst;
}

double orthonormality_inf_norm(const SymSpectrum& s) {
    const int n = s.n;
    double worst = 0.0;
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += s.vec(i, a) * s.vec(i, b);
            worst = std::max(worst, std::fabs(dot - (a == b ? 1.0 : 0.0)));
        }
    return worst;
}

std::vector<double> random_symmetric(int n, std::uint64_t seed, double scale = 1.0) {
    Prng rng(seed, "eigh.random");
    std::vector<double> m(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            const double v = rng.normal() * scale;
            m[static_cast<std::size_t>(i) * n + j] = v;
            m[static_cast<std::size_t>(j) * n + i] = v;
        }
    return m;
}

} // namespace

TEST_CASE("identity matrix has unit spectrum") {
    const std::vector<double> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
    const auto s = eigh_sym(m, 3);
    for (double v : s.eigenvalues) CHECK(v == doctest::Approx(1.0));
    CHECK(orthonormality_inf_norm(s) < 1e-8);
}

TEST_CASE("diagonal matrix returns sorted diagonal and axis vectors") {
    const std::vector<double> m{3, 0, 0, 1};
    const auto s = eigh_sym(m, 2);
    CHECK(s.eigenvalues[0] == doctest::Approx(3.0));
    CHECK(s.eigenvalues[1] == doctest::Approx(1.0));
    // Axis permutation: first column picks out the (1,0) direction.
    CHECK(std::fabs(s.vec(0, 0)) == doctest::Approx(1.0));
    CHECK(std::fabs(s.vec(1, 1)) == doctest::Approx(1.0));
}

TEST_CASE("hand-solved 2x2: [[2,1],[1,2]] -> (3,1) with diagonal eigenvectors") {
    const std::vector<double> m{2, 1, 1, 2};
    const auto s = eigh_sym(m, 2);
    CHECK(s.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(s.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-12));
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    CHECK(std::fabs(s.vec(0, 0)) == doctest::Approx(inv_sqrt2));
    CHECK(std::fabs(s.vec(1, 0)) == doctest::Approx(inv_sqrt2));
    CHECK(s.vec(0, 0) * s.vec(1, 0) > 0.0); // same sign: (1,1)/sqrt(2)
    CHECK(s.vec(0, 1) * s.vec(1, 1) < 0.0); // opposite: (1,-1)/sqrt(2)
}

TEST_CASE("contract errors: shape, asymmetry, NaN") {
    const std::vector<double> not_square{1, 2, 3};
    CHECK_THROWS_AS(eigh_sym(not_square, 2), std::invalid_argument);
    const std::vector<double> asymmetric{1, 2, 3, 4};
    CHECK_THROWS_AS(eigh_sym(asymmetric, 2), std::invalid_argument);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const std::vector<double> with_nan{nan, 0, 0, 1};
    CHECK_THROWS_AS(eigh_sym(with_nan, 2), std::invalid_argument);
}

TEST_CASE("random symmetric matrices: reconstruction, diagonality, trace") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const int n = 2 + static_cast<int>(seed % 9);
        const auto m = random_symmetric(n, seed);
        const auto s = eigh_sym(m, n);

        CHECK(reconstruction_inf_norm(m, s) < 1e-7);
        CHECK(orthonormality_inf_norm(s) < 1e-8);
        for (std::size_t j = 1; j < s.eigenvalues.size(); ++j)
            CHECK(s.eigenvalues[j - 1] >= s.eigenvalues[j]);

        // V^T m V diagonal within 1e-7 and trace preserved within 1e-9.
        double trace_m = 0.0, trace_l = 0.0;
        for (int i = 0; i < n; ++i) trace_m += m[static_cast<std::size_t>(i) * n + i];
        for (double v : s.eigenvalues) trace_l += v;
        CHECK(std::fabs(trace_m - trace_l) < 1e-9);

        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                double v = 0.0;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j)
                        v += s.vec(i, a) * m[static_cast<std::size_t>(i) * n + j] * s.vec(j, b);
                if (a == b)
                    CHECK(std::fabs(v - s.eigenvalues[static_cast<std::size_t>(a)]) < 1e-7);
                else
                    CHECK(std::fabs(v) < 1e-7);
            }
    }
}

TEST_CASE("tiny negative eigenvalues of PSD matrices clamp to zero") {
    // Rank-1 PSD matrix; round-off can push trailing eigenvalues slightly negative.
    const int n = 4;
    std::vector<double> m(16, 0.0);
    const double u[4] = {0.5, -0.25, 1.25, 0.75};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m[static_cast<std::size_t>(i) * n + j] = u[i] * u[j];
    const auto s = eigh_sym(m, n);
    for (double v : s.eigenvalues) CHECK(v >= 0.0);
}
