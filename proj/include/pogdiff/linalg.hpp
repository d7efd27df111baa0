#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pogdiff/errors.hpp"
#include "pogdiff/tensor.hpp"

namespace pogdiff {

/// Square row-major matrix of doubles.
struct SquareMatrix {
    std::size_t n = 0;
    std::vector<double> a;

    SquareMatrix() = default;
    explicit SquareMatrix(std::size_t size, double fill = 0.0) : n(size), a(size * size, fill) {}

    static SquareMatrix identity(std::size_t size) {
        SquareMatrix m(size);
        for (std::size_t i = 0; i < size; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }

    double trace() const {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += (*this)(i, i);
        return s;
    }
};

inline SquareMatrix operator*(const SquareMatrix& x, const SquareMatrix& y) {
    detail::require_shape(x.n == y.n, "matrix product: size mismatch");
    SquareMatrix out(x.n);
    for (std::size_t i = 0; i < x.n; ++i)
        for (std::size_t k = 0; k < x.n; ++k) {
            const double v = x(i, k);
            for (std::size_t j = 0; j < x.n; ++j) out(i, j) += v * y(k, j);
        }
    return out;
}

struct SymmetricEigen {
    std::vector<double> values;
    SquareMatrix vectors;  // column j is the eigenvector of values[j]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Converges
/// quadratically; intended for the small matrices used here.
inline SymmetricEigen jacobi_eigen(SquareMatrix m, int max_sweeps = 100) {
    const std::size_t n = m.n;
    SquareMatrix v = SquareMatrix::identity(n);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) (i == j ? scale : off) += m(i, j) * m(i, j);
        if (off <= 1e-30 * std::max(scale, 1e-300)) break;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m(p, q);
                if (apq == 0.0) continue;
                const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m(k, p), mkq = m(k, q);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m(p, k), mqk = m(q, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(q, k) = s * mpk + c * mqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
    }
    SymmetricEigen out;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = m(i, i);
    out.vectors = std::move(v);
    return out;
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues
/// (roundoff) are clamped to zero.
inline SquareMatrix sqrt_psd(const SquareMatrix& m) {
    const auto eig = jacobi_eigen(m);
    SquareMatrix out(m.n);
    for (std::size_t k = 0; k < m.n; ++k) {
        const double r = std::sqrt(std::max(0.0, eig.values[k]));
        for (std::size_t i = 0; i < m.n; ++i)
            for (std::size_t j = 0; j < m.n; ++j) out(i, j) += r * eig.vectors(i, k) * eig.vectors(j, k);
    }
    return out;
}

inline SquareMatrix symmetrized(const SquareMatrix& m) {
    SquareMatrix out(m.n);
    for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = 0; j < m.n; ++j) out(i, j) = 0.5 * (m(i, j) + m(j, i));
    return out;
}

}  // namespace pogdiff
