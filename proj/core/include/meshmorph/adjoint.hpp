#pragma once

#include <optional>
#include <vector>

#include "meshmorph/mesh.hpp"
#include "meshmorph/poisson.hpp"

namespace meshmorph {

// Gradient of a functional with respect to node coordinates. Masked entries
// (corner nodes entirely, boundary nodes in the normal direction) are exact
// zeros after apply_mask.
struct CoordinateGradient {
    std::vector<Vec2> values;

    CoordinateGradient() = default;
    explicit CoordinateGradient(int n) : values(n, Vec2{0.0, 0.0}) {}

    CoordinateGradient& operator+=(const CoordinateGradient& o);
    CoordinateGradient& scale(double s);
};

// Corner components zeroed; edge-node gradients projected onto the segment
// tangent. Idempotent.
void apply_mask(const Mesh& mesh, CoordinateGradient& grad);

struct AdjointResult {
    double error = 0.0;  // squared L2 error at the input mesh
    CoordinateGradient grad;
};

// Discrete adjoint gradient of the squared L2 error against the analytic
// solution: one extra SPD solve instead of one solve per coordinate.
AdjointResult adjoint_gradient(const Mesh& mesh, const ProblemSpec& spec, const CgOptions& cg = {});

// Fine-reference mode: the error is measured against a reference field on a
// finer mesh. Mirrors an automated shape derivative, which sees the sampled
// reference values as data; set add_correction to restore the missing
// transport term (reference_correction) and recover the full gradient.
AdjointResult adjoint_gradient_ref(const Mesh& mesh, const ProblemSpec& spec,
                                   const FemField& u_ref, bool add_correction = true,
                                   const CgOptions& cg = {});

// Transport correction for fine-reference gradients, assembled with the same
// quadrature as the error integral. Unmasked.
CoordinateGradient reference_correction(const Mesh& mesh, const FemField& u, const FemField& u_ref);

// Central finite differences of the error per free coordinate component
// (interior nodes in x and y, edge nodes along their segment tangent).
// O(n) full solves; desk scale only. Shrinks the step once if a perturbed
// mesh tangles, then throws.
CoordinateGradient fd_gradient_oracle(const Mesh& mesh, const ProblemSpec& spec, double step,
                                      const CgOptions& cg = {}, const FemField* u_ref = nullptr);

}  // namespace meshmorph
