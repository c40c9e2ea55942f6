#include <cmath>

#include "doctest.h"
#include "meshmorph/linalg.hpp"
#include "meshmorph/rng.hpp"

using namespace meshmorph;

namespace {

SparseMatrix identity(int n) {
    std::vector<std::tuple<int, int, double>> trip;
    for (int i = 0; i < n; ++i) trip.emplace_back(i, i, 1.0);
    return SparseMatrix::from_triplets(n, n, trip);
}

SparseMatrix dense_to_csr(const DenseMatrix& a) {
    std::vector<std::tuple<int, int, double>> trip;
    for (int r = 0; r < a.n; ++r)
        for (int c = 0; c < a.n; ++c)
            if (a(r, c) != 0.0) trip.emplace_back(r, c, a(r, c));
    return SparseMatrix::from_triplets(a.n, a.n, trip);
}

}  // namespace

TEST_SUITE("linalg") {

TEST_CASE("spmv basics") {
    SparseMatrix eye = identity(3);
    DenseVector x{1.0, -2.0, 5.0};
    CHECK(spmv(eye, x) == x);

    SparseMatrix a = SparseMatrix::from_triplets(
        2, 2, {{0, 0, 1.0}, {0, 1, 2.0}, {1, 0, 3.0}, {1, 1, 4.0}});
    DenseVector ones{1.0, 1.0};
    DenseVector y = spmv(a, ones);
    CHECK(y[0] == doctest::Approx(3.0));
    CHECK(y[1] == doctest::Approx(7.0));
    DenseVector yt = spmv(a, ones, true);
    CHECK(yt[0] == doctest::Approx(4.0));
    CHECK(yt[1] == doctest::Approx(6.0));

    CHECK_THROWS_AS(spmv(a, DenseVector{1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("spmv transpose equals explicit transpose on random instances") {
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        int n = 4 + trial;
        std::vector<std::tuple<int, int, double>> trip, trip_t;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c)
                if (rng.uniform() < 0.4) {
                    double v = rng.uniform(-2.0, 2.0);
                    trip.emplace_back(r, c, v);
                    trip_t.emplace_back(c, r, v);
                }
        SparseMatrix a = SparseMatrix::from_triplets(n, n, trip);
        SparseMatrix at = SparseMatrix::from_triplets(n, n, trip_t);
        DenseVector x(n);
        for (double& v : x) v = rng.uniform(-1.0, 1.0);
        DenseVector lhs = spmv(a, x, true), rhs = spmv(at, x);
        for (int i = 0; i < n; ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-14));
    }
}

TEST_CASE("cg identity and 2x2 hand-solved system") {
    DenseVector b{3.0, -1.0, 0.5, 2.0, 7.0};
    DenseVector x = cg_solve(identity(5), b);
    for (int i = 0; i < 5; ++i) CHECK(x[i] == doctest::Approx(b[i]).epsilon(1e-12));

    // [[4,1],[1,3]] x = [1,2]: elimination gives x = [1/11, 7/11]
    SparseMatrix a = SparseMatrix::from_triplets(
        2, 2, {{0, 0, 4.0}, {0, 1, 1.0}, {1, 0, 1.0}, {1, 1, 3.0}});
    DenseVector sol = cg_solve(a, DenseVector{1.0, 2.0});
    CHECK(sol[0] == doctest::Approx(1.0 / 11.0).epsilon(1e-10));
    CHECK(sol[1] == doctest::Approx(7.0 / 11.0).epsilon(1e-10));
}

TEST_CASE("cg reports failure on an indefinite matrix") {
    SparseMatrix a = SparseMatrix::from_triplets(
        2, 2, {{0, 1, 1.0}, {1, 0, 1.0}});  // zero diagonal
    CHECK_THROWS_AS(cg_solve(a, DenseVector{1.0, 0.0}), CgFailure);
}

TEST_CASE("cg residual contract and agreement with lu") {
    Rng rng(42);
    for (int trial = 0; trial < 6; ++trial) {
        int n = 10 + 7 * trial;
        // SPD via M^T M + I
        DenseMatrix m(n);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) m(r, c) = rng.uniform(-1.0, 1.0);
        DenseMatrix spd(n);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                double s = 0.0;
                for (int k = 0; k < n; ++k) s += m(k, r) * m(k, c);
                spd(r, c) = s + (r == c ? 1.0 : 0.0);
            }
        DenseVector b(n);
        for (double& v : b) v = rng.uniform(-1.0, 1.0);

        SparseMatrix a = dense_to_csr(spd);
        CgOptions opts;
        opts.jacobi = trial % 2 == 1;
        DenseVector x = cg_solve(a, b, opts);

        DenseVector r = spmv(a, x);
        double rn = 0.0, bn = 0.0;
        for (int i = 0; i < n; ++i) {
            rn += (r[i] - b[i]) * (r[i] - b[i]);
            bn += b[i] * b[i];
        }
        CHECK(std::sqrt(rn) <= 1e-10 * std::sqrt(bn) * (1.0 + 1e-9));

        DenseVector xd = lu_solve(spd, b);
        for (int i = 0; i < n; ++i) CHECK(x[i] == doctest::Approx(xd[i]).epsilon(1e-8));
    }
}

TEST_CASE("lu basics") {
    DenseMatrix eye(3);
    for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
    DenseVector b{1.0, 2.0, 3.0};
    CHECK(lu_solve(eye, b) == b);

    DenseMatrix p(2);
    p(0, 1) = 1.0;
    p(1, 0) = 1.0;
    DenseVector x = lu_solve(p, DenseVector{3.0, 4.0});
    CHECK(x[0] == doctest::Approx(4.0));
    CHECK(x[1] == doctest::Approx(3.0));

    DenseMatrix sing(2);
    sing(0, 0) = 1.0;
    sing(0, 1) = 2.0;
    sing(1, 0) = 2.0;
    sing(1, 1) = 4.0;
    CHECK_THROWS_AS(lu_solve(sing, DenseVector{1.0, 1.0}), std::runtime_error);
}

TEST_CASE("lu residual bound on random systems") {
    Rng rng(3);
    for (int trial = 0; trial < 4; ++trial) {
        int n = 20 + 15 * trial;
        DenseMatrix a(n);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) a(r, c) = rng.uniform(-1.0, 1.0);
        DenseVector b(n);
        for (double& v : b) v = rng.uniform(-1.0, 1.0);
        DenseMatrix a_copy = a;
        DenseVector x = lu_solve(a, b);

        double rmax = 0.0, anorm = 0.0, xmax = 0.0, bmax = 0.0;
        for (int r = 0; r < n; ++r) {
            double s = 0.0, rowsum = 0.0;
            for (int c = 0; c < n; ++c) {
                s += a_copy(r, c) * x[c];
                rowsum += std::abs(a_copy(r, c));
            }
            rmax = std::max(rmax, std::abs(s - b[r]));
            anorm = std::max(anorm, rowsum);
            bmax = std::max(bmax, std::abs(b[r]));
        }
        for (double v : x) xmax = std::max(xmax, std::abs(v));
        CHECK(rmax <= 1e-10 * (anorm * xmax + bmax));
    }
}

TEST_CASE("csr invariants are enforced") {
    CHECK_THROWS_AS(SparseMatrix(2, 2, {0, 1}, {0}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(SparseMatrix(1, 1, {0, 1}, {2}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(SparseMatrix(1, 2, {0, 2}, {1, 0}, {1.0, 2.0}), std::invalid_argument);
}

}  // TEST_SUITE
