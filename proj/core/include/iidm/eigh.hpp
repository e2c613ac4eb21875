#pragma once

#include <vector>

namespace iidm {

/// Spectrum of a symmetric matrix. eigenvectors is a row-major n x n matrix
/// whose column j is the unit eigenvector paired with eigenvalues[j];
/// eigenvalues are sorted descending. Tiny negative eigenvalues (>= -1e-9)
/// coming from round-off are clamped to zero.
struct SymSpectrum {
    int n = 0;
    std::vector<double> eigenvalues;
    std::vector<double> eigenvectors;

    double vec(int i, int j) const { return eigenvectors[static_cast<std::size_t>(i) * n + j]; }
};

/// Eigendecomposition of a symmetric matrix (row-major, n x n) by cyclic
/// Jacobi rotations. The input must be square, symmetric within 1e-9 and
/// finite; violations throw std::invalid_argument.
SymSpectrum eigh_sym(const std::vector<double>& m, int n);

} // namespace iidm
