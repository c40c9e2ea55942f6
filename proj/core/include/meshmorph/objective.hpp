#pragma once

#include <vector>

#include "meshmorph/adjoint.hpp"
#include "meshmorph/mesh.hpp"
#include "meshmorph/poisson.hpp"

namespace meshmorph {

struct LossBreakdown {
    double error = 0.0;   // squared L2 FEM error
    double equi = 0.0;    // equidistribution loss
    double w_equi = 1.0;
    double total = 0.0;
};

// Equidistribution loss: sum over elements of (I_j - mean I)^2 with the
// vertex-rule cell integral I_j = area_j * (1/3) * sum of nodal monitor
// values. Zero iff all cell integrals agree.
double equi_loss(const Mesh& mesh, const FemField& monitor);

// Analytic coordinate gradient of equi_loss, monitor values held fixed;
// masked like the FEM gradients (corners frozen, boundary tangential).
CoordinateGradient equi_loss_grad(const Mesh& mesh, const FemField& monitor);

struct TotalLossResult {
    LossBreakdown loss;
    CoordinateGradient grad;
};

// E + w_equi * L_equi with the combined masked gradient. The monitor enters
// the regularizer only; the FEM error uses the analytic reference.
TotalLossResult total_loss(const Mesh& mesh, const ProblemSpec& spec, const FemField& monitor,
                           double w_equi, const CgOptions& cg = {});

}  // namespace meshmorph
