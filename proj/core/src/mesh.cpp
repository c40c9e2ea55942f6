#include "meshmorph/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace meshmorph {

Mesh build_rect_mesh(int nx, int ny, const Rect& rect) {
    if (nx < 2 || ny < 2)
        throw std::invalid_argument("build_rect_mesh: need at least 2 nodes per side, got " +
                                    std::to_string(nx) + "x" + std::to_string(ny));
    Mesh m;
    m.domain = {rect.lo, {rect.hi.x, rect.lo.y}, rect.hi, {rect.lo.x, rect.hi.y}};
    m.coords.reserve(static_cast<size_t>(nx) * ny);
    m.boundary.resize(static_cast<size_t>(nx) * ny);

    const double dx = (rect.hi.x - rect.lo.x) / (nx - 1);
    const double dy = (rect.hi.y - rect.lo.y) / (ny - 1);
    auto id = [nx](int i, int j) { return j * nx + i; };

    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            double x = (i == nx - 1) ? rect.hi.x : rect.lo.x + i * dx;
            double y = (j == ny - 1) ? rect.hi.y : rect.lo.y + j * dy;
            m.coords.push_back({x, y});

            BoundaryTag tag;
            bool west = i == 0, east = i == nx - 1, south = j == 0, north = j == ny - 1;
            if ((west || east) && (south || north)) {
                tag = {NodeKind::Corner, -1};
            } else if (south) {
                tag = {NodeKind::Edge, 0};
            } else if (east) {
                tag = {NodeKind::Edge, 1};
            } else if (north) {
                tag = {NodeKind::Edge, 2};
            } else if (west) {
                tag = {NodeKind::Edge, 3};
            }
            m.boundary[id(i, j)] = tag;
        }

    // uniform diagonal split along (lo,lo)->(hi,hi) of each cell, both CCW
    m.tris.reserve(2 * static_cast<size_t>(nx - 1) * (ny - 1));
    for (int j = 0; j + 1 < ny; ++j)
        for (int i = 0; i + 1 < nx; ++i) {
            int a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
            m.tris.push_back({a, b, c});
            m.tris.push_back({a, c, d});
        }
    return m;
}

double signed_area(const Mesh& mesh, int t) {
    const auto& tri = mesh.tris.at(static_cast<size_t>(t));
    const Vec2& p0 = mesh.coords[tri[0]];
    const Vec2& p1 = mesh.coords[tri[1]];
    const Vec2& p2 = mesh.coords[tri[2]];
    return 0.5 * cross(p1 - p0, p2 - p0);
}

TangleReport is_tangled(const Mesh& mesh, double tol) {
    TangleReport rep;
    for (int t = 0; t < mesh.n_tris(); ++t)
        if (signed_area(mesh, t) <= tol) rep.offending.push_back(t);
    rep.tangled = !rep.offending.empty();
    return rep;
}

AspectStats aspect_ratio(const Mesh& mesh) {
    AspectStats st;
    st.per_element.resize(mesh.tris.size());
    double sum = 0.0;
    for (int t = 0; t < mesh.n_tris(); ++t) {
        const auto& tri = mesh.tris[t];
        const Vec2& p0 = mesh.coords[tri[0]];
        const Vec2& p1 = mesh.coords[tri[1]];
        const Vec2& p2 = mesh.coords[tri[2]];
        double area = 0.5 * cross(p1 - p0, p2 - p0);
        double lmax = std::max({norm(p1 - p0), norm(p2 - p1), norm(p0 - p2)});
        if (std::abs(area) <= 1e-14 || lmax == 0.0)
            throw std::runtime_error("aspect_ratio: degenerate element " + std::to_string(t));
        // altitude onto the longest edge: h = 2|area| / lmax
        double ar = lmax * lmax / (2.0 * std::abs(area));
        st.per_element[t] = ar;
        sum += ar;
        st.max = std::max(st.max, ar);
    }
    st.mean = mesh.n_tris() > 0 ? sum / mesh.n_tris() : 0.0;
    return st;
}

MeshGraph mesh_graph(const Mesh& mesh) {
    const int n = mesh.n_nodes();
    std::vector<std::set<int>> adj(n);
    for (const auto& tri : mesh.tris)
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                if (a != b) adj[tri[a]].insert(tri[b]);

    MeshGraph g;
    g.offsets.resize(n + 1, 0);
    for (int i = 0; i < n; ++i) g.offsets[i + 1] = g.offsets[i] + static_cast<int>(adj[i].size());
    g.neighbors.reserve(g.offsets[n]);
    for (int i = 0; i < n; ++i)
        g.neighbors.insert(g.neighbors.end(), adj[i].begin(), adj[i].end());  // sets are sorted
    return g;
}

namespace {

double point_segment_distance(const Vec2& a, const Vec2& b, const Vec2& p) {
    Vec2 ab = b - a;
    double t = dot(p - a, ab) / norm2(ab);
    t = std::clamp(t, 0.0, 1.0);
    return norm(p - (a + t * ab));
}

}  // namespace

void validate_mesh(const Mesh& mesh) {
    const int n = mesh.n_nodes();
    if (mesh.boundary.size() != mesh.coords.size())
        throw std::runtime_error("mesh: boundary tag count does not match node count");
    if (mesh.domain.size() < 3) throw std::runtime_error("mesh: domain polygon needs >= 3 vertices");

    for (int t = 0; t < mesh.n_tris(); ++t) {
        const auto& tri = mesh.tris[t];
        for (int k = 0; k < 3; ++k)
            if (tri[k] < 0 || tri[k] >= n)
                throw std::runtime_error("mesh: triangle " + std::to_string(t) + " index out of range");
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
            throw std::runtime_error("mesh: triangle " + std::to_string(t) + " repeats a node");
    }

    const int nseg = static_cast<int>(mesh.domain.size());
    for (int i = 0; i < n; ++i) {
        const BoundaryTag& tag = mesh.boundary[i];
        if (tag.kind == NodeKind::Interior) continue;
        double d = 1e300;
        if (tag.kind == NodeKind::Edge) {
            if (tag.segment < 0 || tag.segment >= nseg)
                throw std::runtime_error("mesh: node " + std::to_string(i) + " has invalid segment id");
            d = point_segment_distance(mesh.domain[tag.segment],
                                       mesh.domain[(tag.segment + 1) % nseg], mesh.coords[i]);
        } else {  // corner: must coincide with a polygon vertex
            for (const Vec2& v : mesh.domain) d = std::min(d, norm(mesh.coords[i] - v));
        }
        if (d > 1e-12)
            throw std::runtime_error("mesh: boundary node " + std::to_string(i) +
                                     " lies off the domain polygon (dist " + std::to_string(d) + ")");
    }
}

void write_mesh_json(const Mesh& mesh, const std::string& path) {
    nlohmann::json j;
    j["version"] = 1;
    auto& coords = j["coords"] = nlohmann::json::array();
    for (const Vec2& p : mesh.coords) coords.push_back({p.x, p.y});
    auto& tris = j["tris"] = nlohmann::json::array();
    for (const auto& t : mesh.tris) tris.push_back({t[0], t[1], t[2]});
    auto& boundary = j["boundary"] = nlohmann::json::array();
    for (const BoundaryTag& tag : mesh.boundary) {
        int code = -1;
        if (tag.kind == NodeKind::Corner) code = -2;
        else if (tag.kind == NodeKind::Edge) code = tag.segment;
        boundary.push_back(code);
    }
    auto& domain = j["domain"] = nlohmann::json::array();
    for (const Vec2& p : mesh.domain) domain.push_back({p.x, p.y});

    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_mesh_json: cannot open " + path);
    out << j.dump();
    if (!out) throw std::runtime_error("write_mesh_json: write failed for " + path);
}

Mesh read_mesh_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_mesh_json: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("read_mesh_json: " + path + ": " + e.what());
    }
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw std::runtime_error("read_mesh_json: " + path + ": missing or unsupported version");
    for (const char* key : {"coords", "tris", "boundary", "domain"})
        if (!j.contains(key))
            throw std::runtime_error("read_mesh_json: " + path + ": missing field '" + key + "'");

    Mesh m;
    for (const auto& c : j["coords"]) m.coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    for (const auto& t : j["tris"])
        m.tris.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()});
    for (const auto& b : j["boundary"]) {
        int code = b.get<int>();
        BoundaryTag tag;
        if (code == -2) tag = {NodeKind::Corner, -1};
        else if (code >= 0) tag = {NodeKind::Edge, code};
        m.boundary.push_back(tag);
    }
    for (const auto& d : j["domain"]) m.domain.push_back({d.at(0).get<double>(), d.at(1).get<double>()});

    validate_mesh(m);
    TangleReport rep = is_tangled(m);
    if (rep.tangled)
        std::cerr << "warning: " << path << ": mesh is tangled (" << rep.offending.size()
                  << " elements); downstream solvers will refuse it\n";
    return m;
}

Vec2 project_to_segment(const Mesh& mesh, int segment, const Vec2& p) {
    const int nseg = static_cast<int>(mesh.domain.size());
    const Vec2& a = mesh.domain[segment];
    const Vec2& b = mesh.domain[(segment + 1) % nseg];
    Vec2 ab = b - a;
    double t = dot(p - a, ab) / norm2(ab);
    t = std::clamp(t, 0.0, 1.0);
    return a + t * ab;
}

Vec2 segment_tangent(const Mesh& mesh, int segment) {
    const int nseg = static_cast<int>(mesh.domain.size());
    Vec2 ab = mesh.domain[(segment + 1) % nseg] - mesh.domain[segment];
    return ab * (1.0 / norm(ab));
}

}  // namespace meshmorph
