#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace meshmorph {

using DenseVector = std::vector<double>;

// Compressed sparse row matrix. Column indices strictly increasing per row.
class SparseMatrix {
public:
    SparseMatrix() = default;
    SparseMatrix(int rows, int cols, std::vector<int> offsets, std::vector<int> col_idx,
                 std::vector<double> values);

    // Duplicate (row,col) entries are summed.
    static SparseMatrix from_triplets(int rows, int cols,
                                      const std::vector<std::tuple<int, int, double>>& triplets);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    const std::vector<int>& offsets() const { return offsets_; }
    const std::vector<int>& col_idx() const { return col_idx_; }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    double at(int r, int c) const;  // 0 if not stored

private:
    int rows_ = 0, cols_ = 0;
    std::vector<int> offsets_{0};
    std::vector<int> col_idx_;
    std::vector<double> values_;
};

// y = A x, or y = A^T x with transpose set.
DenseVector spmv(const SparseMatrix& a, std::span<const double> x, bool transpose = false);

struct CgOptions {
    double tol = 1e-10;     // relative residual
    int max_iter = 0;       // 0 means 10 * n
    bool jacobi = false;    // diagonal preconditioner
};

struct CgFailure : std::runtime_error {
    double residual;
    int iterations;
    CgFailure(const std::string& what, double res, int it)
        : std::runtime_error(what), residual(res), iterations(it) {}
};

// Conjugate gradients for SPD systems; ||Ax-b|| <= tol*||b|| on success.
DenseVector cg_solve(const SparseMatrix& a, std::span<const double> b, const CgOptions& opts = {});

// Row-major dense matrix for the small nonsymmetric systems.
struct DenseMatrix {
    int n = 0;
    std::vector<double> a;  // n*n row-major

    explicit DenseMatrix(int size = 0) : n(size), a(static_cast<size_t>(size) * size, 0.0) {}
    double& operator()(int r, int c) { return a[static_cast<size_t>(r) * n + c]; }
    double operator()(int r, int c) const { return a[static_cast<size_t>(r) * n + c]; }
};

// LU with partial pivoting; throws std::runtime_error on singular input.
DenseVector lu_solve(DenseMatrix a, DenseVector b);

}  // namespace meshmorph
