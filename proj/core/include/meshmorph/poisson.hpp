#pragma once

#include <array>
#include <string>
#include <vector>

#include "meshmorph/linalg.hpp"
#include "meshmorph/mesh.hpp"

namespace meshmorph {

struct Gaussian {
    Vec2 center;
    double sigma = 0.1;
    double amplitude = 1.0;
};

// Manufactured problem: exact solution u* is a sum of Gaussians, the source
// f = -lap(u*) and Dirichlet data g = u*|boundary follow analytically.
struct ProblemSpec {
    std::vector<Gaussian> gaussians;

    double u(const Vec2& p) const;
    Vec2 grad_u(const Vec2& p) const;
    double lap_u(const Vec2& p) const;
    double f(const Vec2& p) const { return -lap_u(p); }
    Vec2 grad_f(const Vec2& p) const;
    double g(const Vec2& p) const { return u(p); }

    void validate() const;  // sigma > 0, at least one Gaussian
};

void write_spec_json(const ProblemSpec& spec, const std::string& path);
ProblemSpec read_spec_json(const std::string& path);

// Nodal values of a P1 function; `components` is 1 for scalars, 2 for
// vector fields stored interleaved (x0,y0,x1,y1,...).
struct FemField {
    const Mesh* mesh = nullptr;
    std::vector<double> values;
    int components = 1;

    double at(int node) const { return values[node]; }
};

// Element stiffness of the P1 Laplacian; symmetric, zero row sums.
std::array<std::array<double, 3>, 3> local_stiffness(const Vec2& p0, const Vec2& p1, const Vec2& p2);

// Assembled Poisson system. `k_raw`/`f_raw` carry no boundary treatment and
// feed the adjoint; `k_bc`/`f_bc` have boundary rows and columns eliminated
// symmetrically (rows set to identity, column contributions moved to the
// right-hand side), which keeps the matrix SPD for CG.
struct PoissonSystem {
    SparseMatrix k_raw;
    SparseMatrix k_bc;
    DenseVector f_raw;
    DenseVector f_bc;
};

PoissonSystem assemble_poisson(const Mesh& mesh, const ProblemSpec& spec);

FemField solve_poisson(const Mesh& mesh, const ProblemSpec& spec, const CgOptions& cg = {});

// Squared L2 error against the analytic solution, degree-4 quadrature.
double l2_error(const FemField& u, const ProblemSpec& spec);

// Squared L2 error against a reference field on a (finer) mesh, evaluated at
// quadrature points by point location in the reference mesh.
double l2_error_ref(const FemField& u, const FemField& u_ref);

struct HessianField {
    std::vector<double> h00, h01, h10, h11;  // per node, h01/h10 averaged to symmetry
    std::vector<double> frobenius;
};

// Weak Hessian recovery with zero Dirichlet data, consistent mass matrix.
HessianField recover_hessian(const FemField& u, const CgOptions& cg = {});

// m = 1 + 5 |grad u| / max |grad u|, per node via area-weighted element
// gradient averaging; identically 1 when the gradient vanishes everywhere.
FemField recover_monitor(const FemField& u);

// Per-node gradient recovery used by the monitor (area-weighted averaging).
std::vector<Vec2> recover_gradient(const FemField& u);

}  // namespace meshmorph
