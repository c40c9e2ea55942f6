#include "meshmorph/adjoint.hpp"

#include <cmath>
#include <stdexcept>

#include "meshmorph/locate.hpp"
#include "meshmorph/quadrature.hpp"

namespace meshmorph {

CoordinateGradient& CoordinateGradient::operator+=(const CoordinateGradient& o) {
    if (values.size() != o.values.size())
        throw std::invalid_argument("CoordinateGradient: size mismatch");
    for (size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
}

CoordinateGradient& CoordinateGradient::scale(double s) {
    for (Vec2& v : values) v *= s;
    return *this;
}

void apply_mask(const Mesh& mesh, CoordinateGradient& grad) {
    for (int i = 0; i < mesh.n_nodes(); ++i) {
        const BoundaryTag& tag = mesh.boundary[i];
        if (tag.kind == NodeKind::Corner) {
            grad.values[i] = {0.0, 0.0};
        } else if (tag.kind == NodeKind::Edge) {
            Vec2 t = segment_tangent(mesh, tag.segment);
            grad.values[i] = t * dot(grad.values[i], t);
        }
    }
}

namespace {

bool is_boundary(const Mesh& mesh, int node) {
    return mesh.boundary[node].kind != NodeKind::Interior;
}

// d(area)/d(vertex k): shoelace derivative of 0.5*cross(p1-p0, p2-p0)
void area_gradient(const Vec2 p[3], Vec2 out[3]) {
    out[0] = 0.5 * perp(p[2] - p[1]);
    out[1] = 0.5 * perp(p[0] - p[2]);
    out[2] = 0.5 * perp(p[1] - p[0]);
}

// d K_local / d vertex: K_ij = (e_i . e_j)/(4A) with e_k the edge opposite k.
// dK[v] holds the 3x3 matrix of derivatives with respect to p_v (as Vec2).
void stiffness_gradient(const Vec2 p[3], Vec2 dk[3][3][3]) {
    const Vec2 e[3] = {p[2] - p[1], p[0] - p[2], p[1] - p[0]};
    const double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
    Vec2 darea[3];
    area_gradient(p, darea);

    // d e_i / d p_v is +I, -I or 0; encode the sign table
    // e_0 = p2-p1: d/dp1 = -1, d/dp2 = +1
    // e_1 = p0-p2: d/dp0 = +1, d/dp2 = -1
    // e_2 = p1-p0: d/dp0 = -1, d/dp1 = +1
    auto esign = [](int i, int v) -> double {
        if (i == 0) return v == 2 ? 1.0 : (v == 1 ? -1.0 : 0.0);
        if (i == 1) return v == 0 ? 1.0 : (v == 2 ? -1.0 : 0.0);
        return v == 1 ? 1.0 : (v == 0 ? -1.0 : 0.0);
    };

    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double kij = dot(e[i], e[j]) / (4.0 * area);
            for (int v = 0; v < 3; ++v) {
                Vec2 dnum = e[j] * esign(i, v) + e[i] * esign(j, v);
                dk[v][i][j] = dnum * (1.0 / (4.0 * area)) - darea[v] * (kij / area);
            }
        }
}

struct ErrorIntegrals {
    double error = 0.0;
    DenseVector de_du;                   // dE/dU_i
    std::vector<Vec2> de_dz_explicit;    // geometric part, U fixed
};

// Quadrature-consistent error integral and its partial derivatives. When
// `reference` is set the integrand uses point-located reference values and
// the explicit term keeps only the volume part (the sampled values are
// treated as data; reference_correction supplies the transport term).
ErrorIntegrals error_integrals(const Mesh& mesh, const FemField& u, const ProblemSpec& spec,
                               const FemField* reference) {
    const int n = mesh.n_nodes();
    ErrorIntegrals out;
    out.de_du.assign(n, 0.0);
    out.de_dz_explicit.assign(n, Vec2{0.0, 0.0});

    std::optional<PointLocator> locator;
    if (reference) locator.emplace(*reference->mesh);
    int hint = 0;

    for (const auto& tri : mesh.tris) {
        const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
        double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
        Vec2 darea[3];
        area_gradient(p, darea);

        double acc = 0.0;
        Vec2 sample[3] = {{0, 0}, {0, 0}, {0, 0}};
        double du_acc[3] = {0.0, 0.0, 0.0};
        for (const TriQuadPoint& q : kTriQuadDeg4) {
            Vec2 x = q.bary[0] * p[0] + q.bary[1] * p[1] + q.bary[2] * p[2];
            double uh = q.bary[0] * u.values[tri[0]] + q.bary[1] * u.values[tri[1]] +
                        q.bary[2] * u.values[tri[2]];
            double ref;
            if (reference) {
                auto hit = locator->locate(x, hint);
                hint = hit.tri;
                const auto& rt = reference->mesh->tris[hit.tri];
                ref = hit.bary[0] * reference->values[rt[0]] + hit.bary[1] * reference->values[rt[1]] +
                      hit.bary[2] * reference->values[rt[2]];
            } else {
                ref = spec.u(x);
            }
            double e = uh - ref;
            acc += q.weight * e * e;
            for (int k = 0; k < 3; ++k) du_acc[k] += q.weight * 2.0 * e * q.bary[k];
            if (!reference) {
                Vec2 gref = spec.grad_u(x);
                for (int k = 0; k < 3; ++k) sample[k] += q.weight * 2.0 * e * q.bary[k] * gref;
            }
        }
        out.error += area * acc;
        for (int k = 0; k < 3; ++k) {
            out.de_du[tri[k]] += area * du_acc[k];
            out.de_dz_explicit[tri[k]] += darea[k] * acc - area * sample[k];
        }
    }
    return out;
}

AdjointResult adjoint_gradient_impl(const Mesh& mesh, const ProblemSpec& spec,
                                    const FemField* u_ref, bool add_correction,
                                    const CgOptions& cg) {
    TangleReport rep = is_tangled(mesh);
    if (rep.tangled) throw std::runtime_error("adjoint_gradient: tangled mesh");
    const int n = mesh.n_nodes();

    PoissonSystem sys = assemble_poisson(mesh, spec);
    FemField u = solve_poisson(mesh, spec, cg);
    ErrorIntegrals ints = error_integrals(mesh, u, spec, u_ref);

    // adjoint solve K lambda = -dE/dU on free nodes (zero at boundary)
    DenseVector rhs(n, 0.0);
    for (int i = 0; i < n; ++i)
        if (!is_boundary(mesh, i)) rhs[i] = -ints.de_du[i];
    DenseVector lambda = cg_solve(sys.k_bc, rhs, cg);
    for (int i = 0; i < n; ++i)
        if (is_boundary(mesh, i)) lambda[i] = 0.0;

    CoordinateGradient grad(n);
    for (int i = 0; i < n; ++i) grad.values[i] = ints.de_dz_explicit[i];

    // element-wise lambda^T (dK/dZ U - dF/dZ)
    for (const auto& tri : mesh.tris) {
        const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
        double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
        Vec2 darea[3];
        area_gradient(p, darea);
        Vec2 dk[3][3][3];
        stiffness_gradient(p, dk);

        for (int v = 0; v < 3; ++v) {
            Vec2 acc{0.0, 0.0};
            for (int i = 0; i < 3; ++i) {
                if (lambda[tri[i]] == 0.0) continue;
                for (int j = 0; j < 3; ++j) acc += dk[v][i][j] * (lambda[tri[i]] * u.values[tri[j]]);
            }
            grad.values[tri[v]] += acc;
        }
        // dF/dZ: F_i = area * sum_q w_q f(x_q) b_qi, quadrature point moves
        // with the vertices
        for (const TriQuadPoint& q : kTriQuadDeg4) {
            Vec2 x = q.bary[0] * p[0] + q.bary[1] * p[1] + q.bary[2] * p[2];
            double fv = spec.f(x);
            Vec2 gf = spec.grad_f(x);
            double lam_phi = q.bary[0] * lambda[tri[0]] + q.bary[1] * lambda[tri[1]] +
                             q.bary[2] * lambda[tri[2]];
            for (int v = 0; v < 3; ++v) {
                Vec2 dF_v = darea[v] * (q.weight * fv * lam_phi) +
                            gf * (area * q.weight * q.bary[v] * lam_phi);
                grad.values[tri[v]] -= dF_v;
            }
        }
    }

    // boundary data moves with sliding boundary nodes: U_b = g(z_b)
    DenseVector k_lambda = spmv(sys.k_raw, lambda);
    for (int b = 0; b < n; ++b) {
        if (!is_boundary(mesh, b)) continue;
        double coeff = ints.de_du[b] + k_lambda[b];
        grad.values[b] += spec.grad_u(mesh.coords[b]) * coeff;
    }

    if (u_ref && add_correction) grad += reference_correction(mesh, u, *u_ref);

    apply_mask(mesh, grad);
    return {ints.error, std::move(grad)};
}

}  // namespace

AdjointResult adjoint_gradient(const Mesh& mesh, const ProblemSpec& spec, const CgOptions& cg) {
    return adjoint_gradient_impl(mesh, spec, nullptr, false, cg);
}

AdjointResult adjoint_gradient_ref(const Mesh& mesh, const ProblemSpec& spec, const FemField& u_ref,
                                   bool add_correction, const CgOptions& cg) {
    return adjoint_gradient_impl(mesh, spec, &u_ref, add_correction, cg);
}

CoordinateGradient reference_correction(const Mesh& mesh, const FemField& u, const FemField& u_ref) {
    if (u_ref.mesh == nullptr) throw std::invalid_argument("reference_correction: missing reference");
    CoordinateGradient grad(mesh.n_nodes());
    PointLocator locator(*u_ref.mesh);
    int hint = 0;
    for (const auto& tri : mesh.tris) {
        const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
        double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
        for (const TriQuadPoint& q : kTriQuadDeg4) {
            Vec2 x = q.bary[0] * p[0] + q.bary[1] * p[1] + q.bary[2] * p[2];
            auto hit = locator.locate(x, hint);
            hint = hit.tri;
            const auto& rt = u_ref.mesh->tris[hit.tri];
            const Vec2 rp[3] = {u_ref.mesh->coords[rt[0]], u_ref.mesh->coords[rt[1]],
                                u_ref.mesh->coords[rt[2]]};
            double ref = hit.bary[0] * u_ref.values[rt[0]] + hit.bary[1] * u_ref.values[rt[1]] +
                         hit.bary[2] * u_ref.values[rt[2]];
            double rarea = 0.5 * cross(rp[1] - rp[0], rp[2] - rp[0]);
            Vec2 e[3] = {rp[2] - rp[1], rp[0] - rp[2], rp[1] - rp[0]};
            Vec2 gref{0.0, 0.0};
            for (int k = 0; k < 3; ++k) gref += perp(e[k]) * (u_ref.values[rt[k]] / (2.0 * rarea));

            double uh = q.bary[0] * u.values[tri[0]] + q.bary[1] * u.values[tri[1]] +
                        q.bary[2] * u.values[tri[2]];
            // the (u - U) grad(u) . V integrand appears once per factor of
            // the squared error, hence the 2
            Vec2 term = gref * (2.0 * area * q.weight * (ref - uh));
            for (int v = 0; v < 3; ++v) grad.values[tri[v]] += term * q.bary[v];
        }
    }
    return grad;
}

CoordinateGradient fd_gradient_oracle(const Mesh& mesh, const ProblemSpec& spec, double step,
                                      const CgOptions& cg, const FemField* u_ref) {
    TangleReport rep = is_tangled(mesh);
    if (rep.tangled) throw std::runtime_error("fd_gradient_oracle: tangled mesh");

    auto eval = [&](const Mesh& m) {
        if (is_tangled(m).tangled) throw std::runtime_error("fd_gradient_oracle: perturbation tangles mesh");
        FemField u = solve_poisson(m, spec, cg);
        return u_ref ? l2_error_ref(u, *u_ref) : l2_error(u, spec);
    };

    auto central = [&](int node, const Vec2& dir, double h) {
        Mesh m = mesh;
        m.coords[node] += dir * h;
        double ep = eval(m);
        m.coords[node] = mesh.coords[node] - dir * h;
        double em = eval(m);
        return (ep - em) / (2.0 * h);
    };

    auto central_retry = [&](int node, const Vec2& dir) {
        double h = step;
        try {
            return central(node, dir, h);
        } catch (const std::runtime_error&) {
            h *= 0.5;  // one shrink, then give up
            return central(node, dir, h);
        }
    };

    CoordinateGradient grad(mesh.n_nodes());
    for (int i = 0; i < mesh.n_nodes(); ++i) {
        const BoundaryTag& tag = mesh.boundary[i];
        if (tag.kind == NodeKind::Corner) continue;
        if (tag.kind == NodeKind::Edge) {
            Vec2 t = segment_tangent(mesh, tag.segment);
            grad.values[i] = t * central_retry(i, t);
        } else {
            grad.values[i] = {central_retry(i, {1.0, 0.0}), central_retry(i, {0.0, 1.0})};
        }
    }
    return grad;
}

}  // namespace meshmorph
