#include "meshmorph/locate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace meshmorph {

namespace {

std::array<double, 3> barycentric(const Vec2& p0, const Vec2& p1, const Vec2& p2, const Vec2& p) {
    double area = cross(p1 - p0, p2 - p0);
    double b0 = cross(p1 - p, p2 - p) / area;
    double b1 = cross(p2 - p, p0 - p) / area;
    return {b0, b1, 1.0 - b0 - b1};
}

}  // namespace

PointLocator::PointLocator(const Mesh& mesh) : mesh_(&mesh) {
    // edge (min,max) -> adjacent triangles
    std::map<std::pair<int, int>, std::array<int, 2>> edges;
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const auto& tri = mesh.tris[t];
        for (int k = 0; k < 3; ++k) {
            int a = tri[(k + 1) % 3], b = tri[(k + 2) % 3];
            auto key = std::minmax(a, b);
            auto it = edges.find(key);
            if (it == edges.end())
                edges[key] = {t, -1};
            else
                it->second[1] = t;
        }
    }
    tri_neighbors_.assign(mesh.tris.size(), {-1, -1, -1});
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const auto& tri = mesh.tris[t];
        for (int k = 0; k < 3; ++k) {
            auto key = std::minmax(tri[(k + 1) % 3], tri[(k + 2) % 3]);
            const auto& pair = edges[key];
            tri_neighbors_[t][k] = (pair[0] == t) ? pair[1] : pair[0];
        }
    }
}

PointLocator::Hit PointLocator::locate(const Vec2& p, int hint, double tol) const {
    const Mesh& mesh = *mesh_;
    int t = (hint >= 0 && hint < mesh.n_tris()) ? hint : 0;

    // walk: move across the edge with the most negative barycentric weight
    const int max_walk = 2 * mesh.n_tris() + 8;
    for (int step = 0; step < max_walk; ++step) {
        const auto& tri = mesh.tris[t];
        auto bary = barycentric(mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]], p);
        int worst = 0;
        for (int k = 1; k < 3; ++k)
            if (bary[k] < bary[worst]) worst = k;
        if (bary[worst] >= -1e-13) return {t, bary};
        int next = tri_neighbors_[t][worst];
        if (next < 0) break;  // left the mesh through a boundary edge
        t = next;
    }

    // brute force with distance tolerance
    int best_tri = -1;
    double best_short = -1e300;
    std::array<double, 3> best_bary{};
    for (int tt = 0; tt < mesh.n_tris(); ++tt) {
        const auto& tri = mesh.tris[tt];
        auto bary = barycentric(mesh.coords[tri[0]], mesh.coords[tri[1]], mesh.coords[tri[2]], p);
        double shortcoming = std::min({bary[0], bary[1], bary[2]});
        if (shortcoming > best_short) {
            best_short = shortcoming;
            best_tri = tt;
            best_bary = bary;
        }
        if (shortcoming >= 0.0) break;
    }
    if (best_tri < 0) throw std::runtime_error("PointLocator: empty mesh");

    // convert the barycentric shortfall into a distance scale
    const auto& tri = mesh.tris[best_tri];
    double diam = std::max({norm(mesh.coords[tri[1]] - mesh.coords[tri[0]]),
                            norm(mesh.coords[tri[2]] - mesh.coords[tri[1]]),
                            norm(mesh.coords[tri[0]] - mesh.coords[tri[2]])});
    if (best_short < 0.0 && -best_short * diam > tol)
        throw std::runtime_error("PointLocator: point (" + std::to_string(p.x) + ", " +
                                 std::to_string(p.y) + ") outside the mesh");
    for (double& b : best_bary) b = std::max(b, 0.0);
    double s = best_bary[0] + best_bary[1] + best_bary[2];
    for (double& b : best_bary) b /= s;
    return {best_tri, best_bary};
}

double eval_p1(const FemField& f, const PointLocator& locator, const Vec2& p, int hint) {
    auto hit = locator.locate(p, hint);
    const auto& tri = locator.mesh().tris[hit.tri];
    return hit.bary[0] * f.values[tri[0]] + hit.bary[1] * f.values[tri[1]] +
           hit.bary[2] * f.values[tri[2]];
}

FemField interpolate_p1(const FemField& f, const Mesh& mesh_to) {
    PointLocator locator(*f.mesh);
    FemField out;
    out.mesh = &mesh_to;
    out.components = f.components;
    out.values.resize(static_cast<size_t>(mesh_to.n_nodes()) * f.components);
    int hint = 0;
    for (int i = 0; i < mesh_to.n_nodes(); ++i) {
        auto hit = locator.locate(mesh_to.coords[i], hint);
        hint = hit.tri;
        const auto& tri = f.mesh->tris[hit.tri];
        for (int c = 0; c < f.components; ++c) {
            double v = 0.0;
            for (int k = 0; k < 3; ++k) v += hit.bary[k] * f.values[tri[k] * f.components + c];
            out.values[i * f.components + c] = v;
        }
    }
    return out;
}

}  // namespace meshmorph
