#include "meshmorph/poisson.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "meshmorph/locate.hpp"
#include "meshmorph/quadrature.hpp"

namespace meshmorph {

double ProblemSpec::u(const Vec2& p) const {
    double s = 0.0;
    for (const Gaussian& gau : gaussians) {
        double r2 = norm2(p - gau.center);
        s += gau.amplitude * std::exp(-r2 / (2.0 * gau.sigma * gau.sigma));
    }
    return s;
}

Vec2 ProblemSpec::grad_u(const Vec2& p) const {
    Vec2 s{0.0, 0.0};
    for (const Gaussian& gau : gaussians) {
        Vec2 d = p - gau.center;
        double s2 = gau.sigma * gau.sigma;
        double e = gau.amplitude * std::exp(-norm2(d) / (2.0 * s2));
        s += d * (-e / s2);
    }
    return s;
}

double ProblemSpec::lap_u(const Vec2& p) const {
    double s = 0.0;
    for (const Gaussian& gau : gaussians) {
        double s2 = gau.sigma * gau.sigma;
        double r2 = norm2(p - gau.center);
        double e = gau.amplitude * std::exp(-r2 / (2.0 * s2));
        s += e * (r2 / (s2 * s2) - 2.0 / s2);
    }
    return s;
}

Vec2 ProblemSpec::grad_f(const Vec2& p) const {
    // f = -lap u; per Gaussian, grad f = e * (x-c) * (r^2/s^6 - 4/s^4)
    Vec2 s{0.0, 0.0};
    for (const Gaussian& gau : gaussians) {
        Vec2 d = p - gau.center;
        double s2 = gau.sigma * gau.sigma;
        double r2 = norm2(d);
        double e = gau.amplitude * std::exp(-r2 / (2.0 * s2));
        s += d * (e * (r2 / (s2 * s2 * s2) - 4.0 / (s2 * s2)));
    }
    return s;
}

void ProblemSpec::validate() const {
    if (gaussians.empty()) throw std::invalid_argument("ProblemSpec: needs at least one Gaussian");
    for (const Gaussian& gau : gaussians)
        if (!(gau.sigma > 0.0)) throw std::invalid_argument("ProblemSpec: sigma must be positive");
}

void write_spec_json(const ProblemSpec& spec, const std::string& path) {
    nlohmann::json j;
    auto& arr = j["gaussians"] = nlohmann::json::array();
    for (const Gaussian& g : spec.gaussians)
        arr.push_back({{"c", {g.center.x, g.center.y}}, {"sigma", g.sigma}, {"a", g.amplitude}});
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_spec_json: cannot open " + path);
    out << j.dump();
}

ProblemSpec read_spec_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_spec_json: cannot open " + path);
    nlohmann::json j;
    in >> j;
    ProblemSpec spec;
    for (const auto& g : j.at("gaussians"))
        spec.gaussians.push_back({{g.at("c").at(0).get<double>(), g.at("c").at(1).get<double>()},
                                  g.at("sigma").get<double>(), g.at("a").get<double>()});
    spec.validate();
    return spec;
}

std::array<std::array<double, 3>, 3> local_stiffness(const Vec2& p0, const Vec2& p1, const Vec2& p2) {
    // K_ij = (e_i . e_j) / (4A) with e_k the edge opposite vertex k
    double area = 0.5 * cross(p1 - p0, p2 - p0);
    if (std::abs(area) <= 1e-14) throw std::runtime_error("local_stiffness: degenerate triangle");
    Vec2 e[3] = {p2 - p1, p0 - p2, p1 - p0};
    std::array<std::array<double, 3>, 3> k{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) k[i][j] = dot(e[i], e[j]) / (4.0 * area);
    return k;
}

namespace {

bool is_boundary(const Mesh& mesh, int node) {
    return mesh.boundary[node].kind != NodeKind::Interior;
}

}  // namespace

PoissonSystem assemble_poisson(const Mesh& mesh, const ProblemSpec& spec) {
    TangleReport rep = is_tangled(mesh);
    if (rep.tangled)
        throw std::runtime_error("assemble_poisson: tangled mesh (element " +
                                 std::to_string(rep.offending.front()) + ")");
    const int n = mesh.n_nodes();
    std::vector<std::tuple<int, int, double>> trip_raw;
    trip_raw.reserve(9 * mesh.tris.size());
    DenseVector f_raw(n, 0.0);

    for (const auto& tri : mesh.tris) {
        const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
        auto k = local_stiffness(p[0], p[1], p[2]);
        double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) trip_raw.emplace_back(tri[i], tri[j], k[i][j]);
        // load: area * sum_q w_q f(x_q) phi_i(x_q)
        for (const TriQuadPoint& q : kTriQuadDeg4) {
            Vec2 x = q.bary[0] * p[0] + q.bary[1] * p[1] + q.bary[2] * p[2];
            double fv = spec.f(x) * q.weight * area;
            for (int i = 0; i < 3; ++i) f_raw[tri[i]] += fv * q.bary[i];
        }
    }
    SparseMatrix k_raw = SparseMatrix::from_triplets(n, n, trip_raw);

    // symmetric Dirichlet elimination
    DenseVector gval(n, 0.0);
    for (int i = 0; i < n; ++i)
        if (is_boundary(mesh, i)) gval[i] = spec.g(mesh.coords[i]);

    DenseVector f_bc = f_raw;
    std::vector<std::tuple<int, int, double>> trip_bc;
    trip_bc.reserve(trip_raw.size());
    for (int r = 0; r < n; ++r) {
        if (is_boundary(mesh, r)) {
            trip_bc.emplace_back(r, r, 1.0);
            f_bc[r] = gval[r];
            continue;
        }
        for (int kk = k_raw.offsets()[r]; kk < k_raw.offsets()[r + 1]; ++kk) {
            int c = k_raw.col_idx()[kk];
            double v = k_raw.values()[kk];
            if (is_boundary(mesh, c))
                f_bc[r] -= v * gval[c];
            else
                trip_bc.emplace_back(r, c, v);
        }
    }
    SparseMatrix k_bc = SparseMatrix::from_triplets(n, n, trip_bc);
    return {std::move(k_raw), std::move(k_bc), std::move(f_raw), std::move(f_bc)};
}

FemField solve_poisson(const Mesh& mesh, const ProblemSpec& spec, const CgOptions& cg) {
    PoissonSystem sys = assemble_poisson(mesh, spec);
    // Boundary rows are identity with rhs g and eliminated columns, so CG
    // started from the boundary-exact vector keeps those entries untouched.
    const int n = mesh.n_nodes();
    DenseVector rhs = sys.f_bc;
    DenseVector x0(n, 0.0);
    for (int i = 0; i < n; ++i)
        if (is_boundary(mesh, i)) x0[i] = rhs[i];
    DenseVector r(n);
    for (int i = 0; i < n; ++i) r[i] = rhs[i] - (is_boundary(mesh, i) ? x0[i] : 0.0);
    DenseVector dx = cg_solve(sys.k_bc, r, cg);
    FemField field;
    field.mesh = &mesh;
    field.values.resize(n);
    for (int i = 0; i < n; ++i) field.values[i] = x0[i] + dx[i];
    for (int i = 0; i < n; ++i)
        if (is_boundary(mesh, i)) field.values[i] = rhs[i];  // exact Dirichlet data
    return field;
}

double l2_error(const FemField& u, const ProblemSpec& spec) {
    const Mesh& mesh = *u.mesh;
    TangleReport rep = is_tangled(mesh);
    if (rep.tangled) throw std::runtime_error("l2_error: tangled mesh");
    double total = 0.0;
    for (const auto& tri : mesh.tris) {
        const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
        double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
        double acc = 0.0;
        for (const TriQuadPoint& q : kTriQuadDeg4) {
            Vec2 x = q.bary[0] * p[0] + q.bary[1] * p[1] + q.bary[2] * p[2];
            double uh = q.bary[0] * u.values[tri[0]] + q.bary[1] * u.values[tri[1]] +
                        q.bary[2] * u.values[tri[2]];
            double e = uh - spec.u(x);
            acc += q.weight * e * e;
        }
        total += area * acc;
    }
    return total;
}

double l2_error_ref(const FemField& u, const FemField& u_ref) {
    const Mesh& mesh = *u.mesh;
    TangleReport rep = is_tangled(mesh);
    if (rep.tangled) throw std::runtime_error("l2_error_ref: tangled mesh");
    PointLocator locator(*u_ref.mesh);
    double total = 0.0;
    for (const auto& tri : mesh.tris) {
        const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
        double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
        double acc = 0.0;
        for (const TriQuadPoint& q : kTriQuadDeg4) {
            Vec2 x = q.bary[0] * p[0] + q.bary[1] * p[1] + q.bary[2] * p[2];
            double uh = q.bary[0] * u.values[tri[0]] + q.bary[1] * u.values[tri[1]] +
                        q.bary[2] * u.values[tri[2]];
            double e = uh - eval_p1(u_ref, locator, x);
            acc += q.weight * e * e;
        }
        total += area * acc;
    }
    return total;
}

HessianField recover_hessian(const FemField& u, const CgOptions& cg) {
    const Mesh& mesh = *u.mesh;
    const int n = mesh.n_nodes();

    // consistent mass matrix with symmetric zero-Dirichlet elimination
    std::vector<std::tuple<int, int, double>> trip;
    trip.reserve(9 * mesh.tris.size());
    for (const auto& tri : mesh.tris) {
        const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
        double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                bool bi = is_boundary(mesh, tri[i]), bj = is_boundary(mesh, tri[j]);
                if (bi || bj) continue;
                trip.emplace_back(tri[i], tri[j], area / (i == j ? 6.0 : 12.0));
            }
    }
    for (int i = 0; i < n; ++i)
        if (is_boundary(mesh, i)) trip.emplace_back(i, i, 1.0);
    SparseMatrix mass = SparseMatrix::from_triplets(n, n, trip);

    // rhs for component (a,b): -integral d_a u d_b phi_k; gradients are
    // element constants for P1
    HessianField h;
    std::vector<double>* comps[4] = {&h.h00, &h.h01, &h.h10, &h.h11};
    const int pairs[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    for (int c = 0; c < 4; ++c) {
        DenseVector rhs(n, 0.0);
        for (const auto& tri : mesh.tris) {
            const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
            double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
            Vec2 e[3] = {p[2] - p[1], p[0] - p[2], p[1] - p[0]};
            Vec2 grad_u{0.0, 0.0};
            Vec2 grads[3];
            for (int k = 0; k < 3; ++k) {
                grads[k] = perp(e[k]) * (1.0 / (2.0 * area));
                grad_u += grads[k] * u.values[tri[k]];
            }
            double du_a = pairs[c][0] == 0 ? grad_u.x : grad_u.y;
            for (int k = 0; k < 3; ++k) {
                if (is_boundary(mesh, tri[k])) continue;
                double dphi_b = pairs[c][1] == 0 ? grads[k].x : grads[k].y;
                rhs[tri[k]] -= area * du_a * dphi_b;
            }
        }
        *comps[c] = cg_solve(mass, rhs, cg);
    }
    // enforce symmetry
    for (int i = 0; i < n; ++i) {
        double avg = 0.5 * (h.h01[i] + h.h10[i]);
        h.h01[i] = avg;
        h.h10[i] = avg;
    }
    h.frobenius.resize(n);
    for (int i = 0; i < n; ++i)
        h.frobenius[i] = std::sqrt(h.h00[i] * h.h00[i] + 2.0 * h.h01[i] * h.h01[i] +
                                   h.h11[i] * h.h11[i]);
    return h;
}

std::vector<Vec2> recover_gradient(const FemField& u) {
    const Mesh& mesh = *u.mesh;
    const int n = mesh.n_nodes();
    std::vector<Vec2> g(n, Vec2{0.0, 0.0});
    std::vector<double> wsum(n, 0.0);
    for (const auto& tri : mesh.tris) {
        const Vec2 p[3] = {mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]]};
        double area = 0.5 * cross(p[1] - p[0], p[2] - p[0]);
        Vec2 e[3] = {p[2] - p[1], p[0] - p[2], p[1] - p[0]};
        Vec2 grad{0.0, 0.0};
        for (int k = 0; k < 3; ++k) grad += perp(e[k]) * (u.values[tri[k]] / (2.0 * area));
        for (int k = 0; k < 3; ++k) {
            g[tri[k]] += grad * area;
            wsum[tri[k]] += area;
        }
    }
    for (int i = 0; i < n; ++i)
        if (wsum[i] > 0.0) g[i] *= 1.0 / wsum[i];
    return g;
}

FemField recover_monitor(const FemField& u) {
    const Mesh& mesh = *u.mesh;
    std::vector<Vec2> g = recover_gradient(u);
    double gmax = 0.0;
    for (const Vec2& v : g) gmax = std::max(gmax, norm(v));

    FemField m;
    m.mesh = &mesh;
    m.values.assign(mesh.n_nodes(), 1.0);
    if (gmax < 1e-12) return m;  // constant solutions carry no signal
    for (int i = 0; i < mesh.n_nodes(); ++i) m.values[i] = 1.0 + 5.0 * norm(g[i]) / gmax;
    return m;
}

}  // namespace meshmorph
