#pragma once

#include <array>
#include <vector>

#include "meshmorph/mesh.hpp"
#include "meshmorph/poisson.hpp"

namespace meshmorph {

// Point location by walking across element neighbours, with a brute-force
// scan as fallback. Points up to 1e-10 outside the nearest element are
// accepted with clamped barycentric coordinates.
class PointLocator {
public:
    explicit PointLocator(const Mesh& mesh);

    struct Hit {
        int tri = -1;
        std::array<double, 3> bary{};
    };

    // Throws std::runtime_error if the point is farther than tol outside
    // every element. `hint` seeds the walk (pass the previous hit).
    Hit locate(const Vec2& p, int hint = 0, double tol = 1e-10) const;

    const Mesh& mesh() const { return *mesh_; }

private:
    const Mesh* mesh_;
    std::vector<std::array<int, 3>> tri_neighbors_;  // across edge opposite vertex k; -1 on boundary
};

// Value of a scalar P1 field at p (locates p in the field's mesh).
double eval_p1(const FemField& f, const PointLocator& locator, const Vec2& p, int hint = 0);

// Nodal transfer onto mesh_to; exact on globally affine fields. Works per
// component for vector fields.
FemField interpolate_p1(const FemField& f, const Mesh& mesh_to);

}  // namespace meshmorph
