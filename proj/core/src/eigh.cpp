#include "iidm/eigh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace iidm {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kOffDiagTol = 1e-12;

double off_diag_norm(const std::vector<double>& a, int n) {
    double s = 0.0;
    for (int p = 0; p < n; ++p)
        for (int q = p + 1; q < n; ++q) {
            const double v = a[static_cast<std::size_t>(p) * n + q];
            s += 2.0 * v * v;
        }
    return std::sqrt(s);
}

} // namespace

SymSpectrum eigh_sym(const std::vector<double>& m, int n) {
    if (n <= 0 || m.size() != static_cast<std::size_t>(n) * n)
        throw std::invalid_argument("eigh_sym: matrix is not square n x n");
    double fro = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double v = m[static_cast<std::size_t>(i) * n + j];
            if (!std::isfinite(v))
                throw std::invalid_argument("eigh_sym: matrix has non-finite entries");
            fro += v * v;
            if (j > i) {
                const double w = m[static_cast<std::size_t>(j) * n + i];
                if (std::fabs(v - w) > 1e-9)
                    throw std::invalid_argument("eigh_sym: matrix is not symmetric within 1e-9");
            }
        }
    fro = std::sqrt(fro);
    const double tol = kOffDiagTol * std::max(1.0, fro);

    std::vector<double> a = m;
    // Symmetrize exactly so rotations act on a clean input.
    for (int p = 0; p < n; ++p)
        for (int q = p + 1; q < n; ++q) {
            const double v = 0.5 * (a[static_cast<std::size_t>(p) * n + q] +
                                    a[static_cast<std::size_t>(q) * n + p]);
            a[static_cast<std::size_t>(p) * n + q] = v;
            a[static_cast<std::size_t>(q) * n + p] = v;
        }

    std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;

    auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
    auto vt = [&](int i, int j) -> double& { return v[static_cast<std::size_t>(i) * n + j]; };

    for (int sweep = 0; sweep < kMaxSweeps && off_diag_norm(a, n) > tol; ++sweep) {
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (apq == 0.0) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                const double app = at(p, p), aqq = at(q, q);
                at(p, p) = app - t * apq;
                at(q, q) = aqq + t * apq;
                at(p, q) = 0.0;
                at(q, p) = 0.0;
                for (int i = 0; i < n; ++i) {
                    if (i == p || i == q) continue;
                    const double aip = at(i, p), aiq = at(i, q);
                    at(i, p) = c * aip - s * aiq;
                    at(p, i) = at(i, p);
                    at(i, q) = s * aip + c * aiq;
                    at(q, i) = at(i, q);
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = vt(i, p), viq = vt(i, q);
                    vt(i, p) = c * vip - s * viq;
                    vt(i, q) = s * vip + c * viq;
                }
            }
    }

    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(), [&](int i, int j) {
        return a[static_cast<std::size_t>(i) * n + i] > a[static_cast<std::size_t>(j) * n + j];
    });

    SymSpectrum out;
    out.n = n;
    out.eigenvalues.resize(static_cast<std::size_t>(n));
    out.eigenvectors.resize(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j) {
        double lam = a[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)]) * n +
                       perm[static_cast<std::size_t>(j)]];
        if (lam < 0.0 && lam >= -1e-9) lam = 0.0;
        out.eigenvalues[static_cast<std::size_t>(j)] = lam;
        for (int i = 0; i < n; ++i)
            out.eigenvectors[static_cast<std::size_t>(i) * n + j] =
                v[static_cast<std::size_t>(i) * n + perm[static_cast<std::size_t>(j)]];
    }
    return out;
}

} // namespace iidm
