#include <cmath>

#include "doctest.h"
#include "meshmorph/objective.hpp"
#include "meshmorph/rng.hpp"
#include "test_helpers.hpp"

using namespace meshmorph;
using namespace meshmorph::testing;

namespace {

FemField const_monitor(const Mesh& mesh, double value) {
    FemField f;
    f.mesh = &mesh;
    f.values.assign(mesh.n_nodes(), value);
    return f;
}

// central differences of equi_loss along the free directions
CoordinateGradient equi_fd(const Mesh& mesh, const FemField& monitor, double h) {
    CoordinateGradient g(mesh.n_nodes());
    auto eval = [&](const Mesh& m) {
        FemField mm;
        mm.mesh = &m;
        mm.values = monitor.values;
        return equi_loss(m, mm);
    };
    auto central = [&](int node, const Vec2& dir) {
        Mesh p = mesh, q = mesh;
        p.coords[node] += dir * h;
        q.coords[node] -= dir * h;
        return (eval(p) - eval(q)) / (2.0 * h);
    };
    for (int i = 0; i < mesh.n_nodes(); ++i) {
        const BoundaryTag& tag = mesh.boundary[i];
        if (tag.kind == NodeKind::Corner) continue;
        if (tag.kind == NodeKind::Edge) {
            Vec2 t = segment_tangent(mesh, tag.segment);
            g.values[i] = t * central(i, t);
        } else {
            g.values[i] = {central(i, {1, 0}), central(i, {0, 1})};
        }
    }
    return g;
}

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("uniform mesh with constant monitor equidistributes exactly") {
    Mesh m = build_rect_mesh(7, 7);
    CHECK(equi_loss(m, const_monitor(m, 1.0)) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(equi_loss(m, const_monitor(m, 0.0)) == 0.0);  // zero monitor, any mesh
}

TEST_CASE("two-element hand oracle") {
    // areas 0.25 and 0.75, m = 1: integrals {0.25, 0.75}, mean 0.5, loss 0.125
    Mesh m;
    m.coords = {{0, 0}, {1, 0}, {0.5, 0.5}, {-1, 2}};
    m.tris = {{0, 1, 2}, {0, 2, 3}};
    m.boundary.resize(4);
    m.domain = {{0, 0}, {1, 0}, {0.5, 0.5}, {-1, 2}};
    CHECK(signed_area(m, 0) == doctest::Approx(0.25));
    CHECK(signed_area(m, 1) == doctest::Approx(0.75));
    CHECK(equi_loss(m, const_monitor(m, 1.0)) == doctest::Approx(0.125).epsilon(1e-14));
}

TEST_CASE("loss is zero only for equal cell integrals") {
    Rng rng(8);
    Mesh m = jitter_mesh(build_rect_mesh(6, 6), rng, 0.25);
    FemField mon = const_monitor(m, 1.0);
    CHECK(equi_loss(m, mon) > 1e-14);
}

TEST_CASE("gradient vanishes on the uniform equidistributed mesh") {
    Mesh m = build_rect_mesh(6, 6);
    CoordinateGradient g = equi_loss_grad(m, const_monitor(m, 1.0));
    for (const Vec2& v : g.values) {
        CHECK(std::abs(v.x) <= 1e-14);
        CHECK(std::abs(v.y) <= 1e-14);
    }
}

TEST_CASE("analytic gradient matches finite differences on jittered meshes") {
    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
        Mesh m = jitter_mesh(build_rect_mesh(5, 5), rng, 0.2);
        if (is_tangled(m).tangled) continue;
        FemField mon;
        mon.mesh = &m;
        mon.values.resize(m.n_nodes());
        for (double& v : mon.values) v = rng.uniform(1.0, 6.0);  // monitor range

        CoordinateGradient g = equi_loss_grad(m, mon);
        CoordinateGradient fd = equi_fd(m, mon, 1e-7);
        CHECK(max_rel_discrepancy(g, fd) < 1e-6);
    }
}

TEST_CASE("corner components masked") {
    Rng rng(56);
    Mesh m = jitter_mesh(build_rect_mesh(5, 5), rng, 0.2);
    FemField mon = const_monitor(m, 1.0);
    CoordinateGradient g = equi_loss_grad(m, mon);
    for (int i = 0; i < m.n_nodes(); ++i)
        if (m.boundary[i].kind == NodeKind::Corner) {
            CHECK(g.values[i].x == 0.0);
            CHECK(g.values[i].y == 0.0);
        }
}

TEST_CASE("tangled meshes are rejected") {
    Mesh m = build_rect_mesh(3, 3);
    m.coords[4] = {3.0, 3.0};
    FemField mon = const_monitor(m, 1.0);
    CHECK_THROWS_AS(equi_loss(m, mon), std::runtime_error);
    CHECK_THROWS_AS(equi_loss_grad(m, mon), std::runtime_error);
}

TEST_CASE("pure equidistribution descent strictly decreases the loss") {
    Rng rng(57);
    Mesh m = jitter_mesh(build_rect_mesh(6, 6), rng, 0.2);
    FemField mon = const_monitor(m, 1.0);
    double loss = equi_loss(m, mon);
    int accepted = 0;
    for (int step = 0; step < 40 && accepted < 25; ++step) {
        CoordinateGradient g = equi_loss_grad(m, mon);
        double lr = 0.5;
        for (int half = 0; half < 30; ++half) {
            Mesh trial = m;
            for (int i = 0; i < m.n_nodes(); ++i) trial.coords[i] -= lr * g.values[i];
            if (!is_tangled(trial).tangled) {
                FemField tm;
                tm.mesh = &trial;
                tm.values = mon.values;
                double tl = equi_loss(trial, tm);
                if (tl < loss) {
                    m = std::move(trial);
                    mon.mesh = &m;
                    loss = tl;
                    ++accepted;
                    break;
                }
            }
            lr *= 0.5;
        }
    }
    CHECK(accepted >= 25);  // every accepted step was a strict decrease
}

TEST_CASE("total loss composition") {
    Rng rng(58);
    Mesh m = jitter_mesh(build_rect_mesh(6, 6), rng, 0.15);
    ProblemSpec spec = random_spec(rng);
    CgOptions cg{1e-13, 0, false};

    FemField mon = const_monitor(m, 1.0);
    TotalLossResult zero_w = total_loss(m, spec, mon, 0.0, cg);
    AdjointResult adj = adjoint_gradient(m, spec, cg);
    CHECK(zero_w.loss.total == adj.error);
    for (int i = 0; i < m.n_nodes(); ++i) {
        CHECK(zero_w.grad.values[i].x == adj.grad.values[i].x);
        CHECK(zero_w.grad.values[i].y == adj.grad.values[i].y);
    }

    TotalLossResult combined = total_loss(m, spec, mon, 1.0, cg);
    CHECK(combined.loss.total ==
          doctest::Approx(combined.loss.error + combined.loss.equi).epsilon(1e-15));
    CHECK(combined.loss.error >= 0.0);
    CHECK(combined.loss.equi >= 0.0);
}

TEST_CASE("zero problem on a uniform mesh has zero gradient") {
    Mesh m = build_rect_mesh(5, 5);
    ProblemSpec zero;
    zero.gaussians = {{{0.5, 0.5}, 1.0, 0.0}};
    TotalLossResult r = total_loss(m, zero, const_monitor(m, 1.0), 1.0);
    CHECK(r.loss.total <= 1e-25);
    for (const Vec2& v : r.grad.values) {
        CHECK(std::abs(v.x) <= 1e-12);
        CHECK(std::abs(v.y) <= 1e-12);
    }
}

}  // TEST_SUITE
