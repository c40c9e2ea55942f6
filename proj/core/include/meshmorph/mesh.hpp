#pragma once

#include <array>
#include <string>
#include <vector>

#include "meshmorph/geometry.hpp"

namespace meshmorph {

enum class NodeKind { Interior, Edge, Corner };

struct BoundaryTag {
    NodeKind kind = NodeKind::Interior;
    int segment = -1;  // domain polygon segment id for Edge nodes
};

// Triangle mesh of a polygonal domain. Triangles are stored counter-clockwise;
// the sign of the element area is the tangling test. Immutable by convention
// once built: operations return new meshes instead of mutating.
struct Mesh {
    std::vector<Vec2> coords;
    std::vector<std::array<int, 3>> tris;
    std::vector<BoundaryTag> boundary;
    std::vector<Vec2> domain;  // boundary polygon, CCW; segment k runs domain[k] -> domain[k+1 mod n]

    int n_nodes() const { return static_cast<int>(coords.size()); }
    int n_tris() const { return static_cast<int>(tris.size()); }
};

// Node adjacency of the mesh: i and j are neighbours iff they share a
// triangle. Directed edge list in CSR layout, neighbour lists sorted.
struct MeshGraph {
    std::vector<int> offsets;    // size n_nodes + 1
    std::vector<int> neighbors;  // concatenated sorted neighbour lists

    int n_nodes() const { return static_cast<int>(offsets.size()) - 1; }
    int n_edges() const { return static_cast<int>(neighbors.size()); }
    int degree(int i) const { return offsets[i + 1] - offsets[i]; }
};

struct Rect {
    Vec2 lo{0.0, 0.0};
    Vec2 hi{1.0, 1.0};
};

struct TangleReport {
    bool tangled = false;
    std::vector<int> offending;  // triangle indices with signed area <= tol
};

struct AspectStats {
    std::vector<double> per_element;
    double mean = 0.0;
    double max = 0.0;
};

// Structured triangulation of a rectangle: nx*ny nodes, uniform diagonal
// split, corners/edges tagged. Throws std::invalid_argument for nx or ny < 2.
Mesh build_rect_mesh(int nx, int ny, const Rect& rect = {});

double signed_area(const Mesh& mesh, int t);

// Tangled iff any signed area <= tol (default 1e-14).
TangleReport is_tangled(const Mesh& mesh, double tol = 1e-14);

// Aspect ratio per element: longest edge over the altitude onto it.
// Lower bound 2/sqrt(3) (equilateral). Throws on degenerate elements.
AspectStats aspect_ratio(const Mesh& mesh);

MeshGraph mesh_graph(const Mesh& mesh);

// Structural checks (index bounds, orientation, boundary tags on the domain
// polygon). Throws std::runtime_error describing the first violation.
void validate_mesh(const Mesh& mesh);

// JSON mesh file, schema version 1:
//   {version:1, coords:[[x,y],..], tris:[[i,j,k],..], boundary:[tag,..], domain:[[x,y],..]}
// with tag = -1 interior, -2 corner, k>=0 edge on domain segment k.
// Coordinates round-trip bit exact. Reading a tangled mesh warns on stderr
// but succeeds; structural violations throw.
void write_mesh_json(const Mesh& mesh, const std::string& path);
Mesh read_mesh_json(const std::string& path);

// Closest point on domain segment k, clamped to the segment.
Vec2 project_to_segment(const Mesh& mesh, int segment, const Vec2& p);
Vec2 segment_tangent(const Mesh& mesh, int segment);  // unit vector

}  // namespace meshmorph
