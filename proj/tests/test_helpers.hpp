#pragma once

#include <algorithm>
#include <cmath>

#include "meshmorph/adjoint.hpp"
#include "meshmorph/mesh.hpp"
#include "meshmorph/poisson.hpp"
#include "meshmorph/rng.hpp"

namespace meshmorph::testing {

// interior nodes jittered in both directions, edge nodes along their segment
inline Mesh jitter_mesh(const Mesh& base, Rng& rng, double amount) {
    Mesh m = base;
    double h = 1.0 / (std::sqrt(static_cast<double>(m.n_nodes())) - 1.0);
    for (int i = 0; i < m.n_nodes(); ++i) {
        if (m.boundary[i].kind == NodeKind::Interior) {
            m.coords[i] += Vec2{rng.uniform(-amount * h, amount * h),
                                rng.uniform(-amount * h, amount * h)};
        } else if (m.boundary[i].kind == NodeKind::Edge) {
            Vec2 t = segment_tangent(m, m.boundary[i].segment);
            m.coords[i] += t * rng.uniform(-amount * h, amount * h);
        }
    }
    return m;
}

inline ProblemSpec random_spec(Rng& rng, int min_g = 1, int max_g = 2) {
    ProblemSpec spec;
    int ng = rng.uniform_int(min_g, max_g);
    for (int g = 0; g < ng; ++g)
        spec.gaussians.push_back({{rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75)},
                                  rng.uniform(0.08, 0.2), rng.uniform(0.5, 1.0)});
    return spec;
}

// max over components of |a-b| / (|b| + guard*scale), scale = max |b|.
// The guard absorbs the FD oracle's roundoff floor on near-zero components.
inline double max_rel_discrepancy(const CoordinateGradient& a, const CoordinateGradient& b,
                                  double guard = 1e-6) {
    double scale = 0.0;
    for (const Vec2& v : b.values) scale = std::max({scale, std::abs(v.x), std::abs(v.y)});
    double rel = 0.0;
    for (size_t i = 0; i < b.values.size(); ++i) {
        rel = std::max(rel, std::abs(a.values[i].x - b.values[i].x) /
                                (std::abs(b.values[i].x) + guard * scale));
        rel = std::max(rel, std::abs(a.values[i].y - b.values[i].y) /
                                (std::abs(b.values[i].y) + guard * scale));
    }
    return rel;
}

}  // namespace meshmorph::testing
