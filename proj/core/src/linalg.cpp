#include "meshmorph/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace meshmorph {

SparseMatrix::SparseMatrix(int rows, int cols, std::vector<int> offsets, std::vector<int> col_idx,
                           std::vector<double> values)
    : rows_(rows), cols_(cols), offsets_(std::move(offsets)), col_idx_(std::move(col_idx)),
      values_(std::move(values)) {
    if (static_cast<int>(offsets_.size()) != rows_ + 1)
        throw std::invalid_argument("SparseMatrix: offsets size mismatch");
    if (col_idx_.size() != values_.size())
        throw std::invalid_argument("SparseMatrix: col/value size mismatch");
    for (int r = 0; r < rows_; ++r) {
        if (offsets_[r] > offsets_[r + 1]) throw std::invalid_argument("SparseMatrix: offsets not monotone");
        for (int k = offsets_[r]; k < offsets_[r + 1]; ++k) {
            if (col_idx_[k] < 0 || col_idx_[k] >= cols_)
                throw std::invalid_argument("SparseMatrix: column index out of range");
            if (k > offsets_[r] && col_idx_[k - 1] >= col_idx_[k])
                throw std::invalid_argument("SparseMatrix: columns not strictly increasing in row");
        }
    }
}

SparseMatrix SparseMatrix::from_triplets(int rows, int cols,
                                         const std::vector<std::tuple<int, int, double>>& triplets) {
    std::vector<std::tuple<int, int, double>> t = triplets;
    std::sort(t.begin(), t.end(), [](const auto& a, const auto& b) {
        return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
    });
    std::vector<int> offsets(rows + 1, 0), col_idx;
    std::vector<double> values;
    col_idx.reserve(t.size());
    values.reserve(t.size());
    for (size_t k = 0; k < t.size();) {
        auto [r, c, v] = t[k];
        double sum = v;
        size_t k2 = k + 1;
        while (k2 < t.size() && std::get<0>(t[k2]) == r && std::get<1>(t[k2]) == c)
            sum += std::get<2>(t[k2++]);
        col_idx.push_back(c);
        values.push_back(sum);
        offsets[r + 1] = static_cast<int>(col_idx.size());
        k = k2;
    }
    for (int r = 0; r < rows; ++r) offsets[r + 1] = std::max(offsets[r + 1], offsets[r]);
    return SparseMatrix(rows, cols, std::move(offsets), std::move(col_idx), std::move(values));
}

double SparseMatrix::at(int r, int c) const {
    for (int k = offsets_[r]; k < offsets_[r + 1]; ++k)
        if (col_idx_[k] == c) return values_[k];
    return 0.0;
}

DenseVector spmv(const SparseMatrix& a, std::span<const double> x, bool transpose) {
    if (!transpose) {
        if (static_cast<int>(x.size()) != a.cols()) throw std::invalid_argument("spmv: dimension mismatch");
        DenseVector y(a.rows(), 0.0);
        for (int r = 0; r < a.rows(); ++r) {
            double s = 0.0;
            for (int k = a.offsets()[r]; k < a.offsets()[r + 1]; ++k)
                s += a.values()[k] * x[a.col_idx()[k]];
            y[r] = s;
        }
        return y;
    }
    if (static_cast<int>(x.size()) != a.rows()) throw std::invalid_argument("spmv: dimension mismatch");
    DenseVector y(a.cols(), 0.0);
    for (int r = 0; r < a.rows(); ++r)
        for (int k = a.offsets()[r]; k < a.offsets()[r + 1]; ++k)
            y[a.col_idx()[k]] += a.values()[k] * x[r];
    return y;
}

DenseVector cg_solve(const SparseMatrix& a, std::span<const double> b, const CgOptions& opts) {
    const int n = a.rows();
    if (a.cols() != n || static_cast<int>(b.size()) != n)
        throw std::invalid_argument("cg_solve: dimension mismatch");

    double bnorm = 0.0;
    for (double v : b) bnorm += v * v;
    bnorm = std::sqrt(bnorm);
    if (bnorm == 0.0) return DenseVector(n, 0.0);

    std::vector<double> inv_diag;
    if (opts.jacobi) {
        inv_diag.assign(n, 1.0);
        for (int r = 0; r < n; ++r) {
            double d = a.at(r, r);
            if (d > 0.0) inv_diag[r] = 1.0 / d;
        }
    }

    const int max_iter = opts.max_iter > 0 ? opts.max_iter : 10 * n;
    DenseVector x(n, 0.0), r(b.begin(), b.end());
    DenseVector z = r;
    if (opts.jacobi)
        for (int i = 0; i < n; ++i) z[i] = r[i] * inv_diag[i];
    DenseVector p = z;
    double rz = std::inner_product(r.begin(), r.end(), z.begin(), 0.0);

    double rnorm = bnorm;
    for (int it = 0; it < max_iter; ++it) {
        DenseVector ap = spmv(a, p);
        double pap = std::inner_product(p.begin(), p.end(), ap.begin(), 0.0);
        if (!(pap > 0.0) || !std::isfinite(pap))
            throw CgFailure("cg_solve: matrix not positive definite (p^T A p = " +
                                std::to_string(pap) + ")", rnorm / bnorm, it);
        double alpha = rz / pap;
        for (int i = 0; i < n; ++i) x[i] += alpha * p[i];
        for (int i = 0; i < n; ++i) r[i] -= alpha * ap[i];
        rnorm = std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0));
        if (rnorm <= opts.tol * bnorm) return x;
        if (opts.jacobi)
            for (int i = 0; i < n; ++i) z[i] = r[i] * inv_diag[i];
        else
            z = r;
        double rz_new = std::inner_product(r.begin(), r.end(), z.begin(), 0.0);
        double beta = rz_new / rz;
        rz = rz_new;
        for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    throw CgFailure("cg_solve: no convergence in " + std::to_string(max_iter) +
                        " iterations (relative residual " + std::to_string(rnorm / bnorm) + ")",
                    rnorm / bnorm, max_iter);
}

DenseVector lu_solve(DenseMatrix a, DenseVector b) {
    const int n = a.n;
    if (static_cast<int>(b.size()) != n) throw std::invalid_argument("lu_solve: dimension mismatch");

    std::vector<int> piv(n);
    std::iota(piv.begin(), piv.end(), 0);

    for (int k = 0; k < n; ++k) {
        int pr = k;
        double pmax = std::abs(a(k, k));
        for (int r = k + 1; r < n; ++r) {
            double v = std::abs(a(r, k));
            if (v > pmax) { pmax = v; pr = r; }
        }
        if (pmax < 1e-300)
            throw std::runtime_error("lu_solve: matrix singular to working precision at column " +
                                     std::to_string(k));
        if (pr != k) {
            for (int c = 0; c < n; ++c) std::swap(a(k, c), a(pr, c));
            std::swap(b[k], b[pr]);
        }
        const double inv_pivot = 1.0 / a(k, k);
        for (int r = k + 1; r < n; ++r) {
            double f = a(r, k) * inv_pivot;
            if (f == 0.0) continue;
            a(r, k) = f;
            for (int c = k + 1; c < n; ++c) a(r, c) -= f * a(k, c);
            b[r] -= f * b[k];
        }
    }
    // back substitution
    DenseVector x(n);
    for (int r = n - 1; r >= 0; --r) {
        double s = b[r];
        for (int c = r + 1; c < n; ++c) s -= a(r, c) * x[c];
        x[r] = s / a(r, r);
    }
    return x;
}

}  // namespace meshmorph
