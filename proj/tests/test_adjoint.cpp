#include <cmath>

#include "doctest.h"
#include "meshmorph/adjoint.hpp"
#include "meshmorph/mesh.hpp"
#include "meshmorph/poisson.hpp"
#include "meshmorph/rng.hpp"
#include "test_helpers.hpp"

using namespace meshmorph;
using namespace meshmorph::testing;

namespace {

const CgOptions kTightCg{1e-13, 0, false};

}  // namespace

TEST_SUITE("adjoint") {

TEST_CASE("gradient vanishes at the centre of a symmetric problem") {
    Mesh m = build_rect_mesh(5, 5);
    ProblemSpec spec;
    spec.gaussians = {{{0.5, 0.5}, 0.2, 1.0}};
    AdjointResult adj = adjoint_gradient(m, spec, kTightCg);
    const int centre = 2 * 5 + 2;
    CHECK(std::abs(adj.grad.values[centre].x) < 1e-9);
    CHECK(std::abs(adj.grad.values[centre].y) < 1e-9);
}

TEST_CASE("corners are masked to exact zero") {
    Rng rng(31);
    Mesh m = jitter_mesh(build_rect_mesh(6, 6), rng, 0.2);
    AdjointResult adj = adjoint_gradient(m, random_spec(rng), kTightCg);
    for (int i = 0; i < m.n_nodes(); ++i)
        if (m.boundary[i].kind == NodeKind::Corner) {
            CHECK(adj.grad.values[i].x == 0.0);
            CHECK(adj.grad.values[i].y == 0.0);
        }
}

TEST_CASE("edge gradients are tangential") {
    Rng rng(32);
    Mesh m = jitter_mesh(build_rect_mesh(6, 6), rng, 0.2);
    AdjointResult adj = adjoint_gradient(m, random_spec(rng), kTightCg);
    for (int i = 0; i < m.n_nodes(); ++i)
        if (m.boundary[i].kind == NodeKind::Edge) {
            Vec2 t = segment_tangent(m, m.boundary[i].segment);
            Vec2 n{-t.y, t.x};
            CHECK(std::abs(dot(adj.grad.values[i], n)) <= 1e-16);
        }
}

TEST_CASE("masking is idempotent") {
    Rng rng(33);
    Mesh m = jitter_mesh(build_rect_mesh(6, 6), rng, 0.2);
    CoordinateGradient g(m.n_nodes());
    for (Vec2& v : g.values) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    CoordinateGradient once = g;
    apply_mask(m, once);
    CoordinateGradient twice = once;
    apply_mask(m, twice);
    for (int i = 0; i < m.n_nodes(); ++i) {
        CHECK(twice.values[i].x == once.values[i].x);
        CHECK(twice.values[i].y == once.values[i].y);
    }
}

TEST_CASE("adjoint matches the finite-difference oracle on jittered meshes") {
    Rng rng(2024);
    int tested = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Mesh m = jitter_mesh(build_rect_mesh(6, 6), rng, 0.25);
        ProblemSpec spec = random_spec(rng);
        if (is_tangled(m).tangled) continue;
        AdjointResult adj = adjoint_gradient(m, spec, kTightCg);
        CoordinateGradient fd = fd_gradient_oracle(m, spec, 1e-6, kTightCg);
        CHECK(max_rel_discrepancy(adj.grad, fd) < 1e-4);
        ++tested;
    }
    CHECK(tested == 20);
}

TEST_CASE("fd oracle returns zero for the zero problem") {
    Mesh m = build_rect_mesh(4, 4);
    ProblemSpec zero;
    zero.gaussians = {{{0.5, 0.5}, 1.0, 0.0}};
    CoordinateGradient fd = fd_gradient_oracle(m, zero, 1e-6, kTightCg);
    for (const Vec2& v : fd.values) {
        CHECK(std::abs(v.x) <= 1e-12);
        CHECK(std::abs(v.y) <= 1e-12);
    }
}

TEST_CASE("fd oracle reports persistent tangling") {
    // sliver element: the interior node sits 0.004 from the boundary, so the
    // 1e-2 step and its single retry at 5e-3 both invert it
    Mesh m;
    m.coords = {{0, 0}, {1, 0}, {0, 1}, {0.004, 0.004}};
    m.tris = {{0, 1, 3}, {0, 3, 2}};
    m.boundary = {{NodeKind::Corner, -1}, {NodeKind::Corner, -1}, {NodeKind::Corner, -1}, {}};
    m.domain = {{0, 0}, {1, 0}, {0, 1}};
    ProblemSpec spec;
    spec.gaussians = {{{0.3, 0.3}, 0.3, 1.0}};
    CHECK_THROWS_AS(fd_gradient_oracle(m, spec, 1e-2, kTightCg), std::runtime_error);
}

TEST_CASE("one backtracked descent step does not increase the error") {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        Mesh m = jitter_mesh(build_rect_mesh(6, 6), rng, 0.15);
        ProblemSpec spec = random_spec(rng);
        AdjointResult adj = adjoint_gradient(m, spec, kTightCg);
        double eta = 0.05;
        bool ok = false;
        for (int half = 0; half < 30; ++half) {
            Mesh trial_mesh = m;
            for (int i = 0; i < m.n_nodes(); ++i)
                trial_mesh.coords[i] -= eta * adj.grad.values[i];
            if (!is_tangled(trial_mesh).tangled) {
                FemField u = solve_poisson(trial_mesh, spec, kTightCg);
                if (l2_error(u, spec) <= adj.error * (1.0 + 1e-10)) {
                    ok = true;
                    break;
                }
            }
            eta *= 0.5;
        }
        CHECK(ok);
    }
}

TEST_CASE("fine-reference gradient needs the transport correction") {
    Rng rng(99);
    Mesh m = jitter_mesh(build_rect_mesh(5, 5), rng, 0.2);
    ProblemSpec spec;
    spec.gaussians = {{{0.45, 0.55}, 0.18, 0.9}};
    Mesh fine = build_rect_mesh(17, 17);
    FemField u_ref = solve_poisson(fine, spec, kTightCg);

    CoordinateGradient fd = fd_gradient_oracle(m, spec, 1e-6, kTightCg, &u_ref);
    AdjointResult with_corr = adjoint_gradient_ref(m, spec, u_ref, true, kTightCg);
    CHECK(max_rel_discrepancy(with_corr.grad, fd) < 1e-3);

    AdjointResult without = adjoint_gradient_ref(m, spec, u_ref, false, kTightCg);
    CHECK(max_rel_discrepancy(without.grad, fd) > 1e-1);  // the term is load-bearing
}

TEST_CASE("reference_correction vanishes for constant references") {
    Mesh m = build_rect_mesh(5, 5);
    ProblemSpec spec;
    spec.gaussians = {{{0.5, 0.5}, 0.2, 1.0}};
    FemField u = solve_poisson(m, spec, kTightCg);

    Mesh fine = build_rect_mesh(9, 9);
    FemField cref;
    cref.mesh = &fine;
    cref.values.assign(fine.n_nodes(), 2.5);
    CoordinateGradient corr = reference_correction(m, u, cref);
    for (const Vec2& v : corr.values) {
        CHECK(v.x == 0.0);
        CHECK(v.y == 0.0);
    }
}

TEST_CASE("reference equal to the solution zeroes the correction integrand") {
    Mesh m = build_rect_mesh(6, 6);
    ProblemSpec spec;
    spec.gaussians = {{{0.5, 0.5}, 0.2, 1.0}};
    FemField u = solve_poisson(m, spec, kTightCg);
    // same mesh, same values: (u_ref - U) vanishes at quadrature points up to
    // the locator recomputing barycentrics in different rounding
    CoordinateGradient corr = reference_correction(m, u, u);
    for (const Vec2& v : corr.values) {
        CHECK(std::abs(v.x) <= 1e-15);
        CHECK(std::abs(v.y) <= 1e-15);
    }
}

}  // TEST_SUITE
