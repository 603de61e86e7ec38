#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixedns/common.hpp"

namespace mixedns {

enum class BoundaryTag { Dirichlet, Neumann };

inline std::string to_string(BoundaryTag t) {
    return t == BoundaryTag::Dirichlet ? "dirichlet" : "neumann";
}

inline BoundaryTag boundary_tag_from_string(const std::string& s) {
    if (s == "dirichlet") return BoundaryTag::Dirichlet;
    if (s == "neumann") return BoundaryTag::Neumann;
    throw InvalidArgument("unknown boundary tag '" + s + "'");
}

struct BoundaryEdge {
    std::array<Index, 2> v;
    BoundaryTag tag;
};

using Triangle = std::array<Index, 3>;

/// Decides the tag of a boundary edge from its two end points.
using TaggingRule = std::function<BoundaryTag(const Vec2&, const Vec2&)>;

/// Walls y = 0 and y = height are no-slip, the ends x = 0 and x = length
/// are do-nothing in/outflow.
inline TaggingRule default_channel_tagging(double length, double height) {
    return [length, height](const Vec2& a, const Vec2& b) {
        const Vec2 m = 0.5 * (a + b);
        const double tol = 1e-12 * std::max(length, height);
        if (std::abs(m.y()) <= tol || std::abs(m.y() - height) <= tol) return BoundaryTag::Dirichlet;
        return BoundaryTag::Neumann;
    };
}

/// One tag per rectangle side; sides are bottom, right, top, left.
inline TaggingRule side_tagging(double length, double height, std::array<BoundaryTag, 4> sides) {
    return [=](const Vec2& a, const Vec2& b) {
        const Vec2 m = 0.5 * (a + b);
        const double tol = 1e-12 * std::max(length, height);
        if (std::abs(m.y()) <= tol) return sides[0];
        if (std::abs(m.x() - length) <= tol) return sides[1];
        if (std::abs(m.y() - height) <= tol) return sides[2];
        return sides[3];
    };
}

/// Triangulated channel with tagged boundary. Immutable; validated on
/// construction.
class ChannelMesh {
 public:
    ChannelMesh(std::vector<Vec2> vertices, std::vector<Triangle> triangles,
                std::vector<BoundaryEdge> boundary_edges)
        : vertices_(std::move(vertices)),
          triangles_(std::move(triangles)),
          boundary_edges_(std::move(boundary_edges)) {
        validate();
    }

    const std::vector<Vec2>& vertices() const { return vertices_; }
    const std::vector<Triangle>& triangles() const { return triangles_; }
    const std::vector<BoundaryEdge>& boundary_edges() const { return boundary_edges_; }
    const std::vector<Index>& corner_points() const { return corner_points_; }
    double h() const { return h_; }

    Index num_vertices() const { return static_cast<Index>(vertices_.size()); }
    Index num_triangles() const { return static_cast<Index>(triangles_.size()); }

    double triangle_area(Index t) const {
        const auto& tri = triangles_[static_cast<std::size_t>(t)];
        const Vec2 e1 = vertex(tri[1]) - vertex(tri[0]);
        const Vec2 e2 = vertex(tri[2]) - vertex(tri[0]);
        return 0.5 * (e1.x() * e2.y() - e1.y() * e2.x());
    }

    double area() const {
        double a = 0.0;
        for (Index t = 0; t < num_triangles(); ++t) a += triangle_area(t);
        return a;
    }

    const Vec2& vertex(Index i) const { return vertices_[static_cast<std::size_t>(i)]; }

    /// Bounding box as (min, max).
    std::pair<Vec2, Vec2> bounding_box() const {
        Vec2 lo = vertices_.front(), hi = vertices_.front();
        for (const auto& p : vertices_) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        return {lo, hi};
    }

    /// Unit directions of the Neumann and Dirichlet edges leaving corner
    /// vertex `c`, in that order.
    std::pair<Vec2, Vec2> corner_directions(Index c) const {
        Vec2 dn = Vec2::Zero(), dd = Vec2::Zero();
        for (const auto& e : boundary_edges_) {
            if (e.v[0] != c && e.v[1] != c) continue;
            const Index other = e.v[0] == c ? e.v[1] : e.v[0];
            const Vec2 d = (vertex(other) - vertex(c)).normalized();
            (e.tag == BoundaryTag::Neumann ? dn : dd) = d;
        }
        return {dn, dd};
    }

 private:
    void validate() {
        require(!vertices_.empty() && !triangles_.empty(), "mesh: empty mesh");
        const Index nv = num_vertices();
        h_ = 0.0;
        std::map<std::pair<Index, Index>, int> edge_count;
        for (Index t = 0; t < num_triangles(); ++t) {
            const auto& tri = triangles_[static_cast<std::size_t>(t)];
            for (Index k : tri) require(k >= 0 && k < nv, "mesh: triangle vertex index out of range");
            require(triangle_area(t) > 0.0, "mesh: triangle " + std::to_string(t) + " is degenerate or clockwise");
            for (int e = 0; e < 3; ++e) {
                const Index a = tri[static_cast<std::size_t>(e)];
                const Index b = tri[static_cast<std::size_t>((e + 1) % 3)];
                ++edge_count[{std::min(a, b), std::max(a, b)}];
                h_ = std::max(h_, (vertex(a) - vertex(b)).norm());
            }
        }

        std::map<std::pair<Index, Index>, int> tagged;
        bool any_dirichlet = false;
        for (const auto& e : boundary_edges_) {
            const auto key = std::make_pair(std::min(e.v[0], e.v[1]), std::max(e.v[0], e.v[1]));
            auto it = edge_count.find(key);
            require(it != edge_count.end() && it->second == 1,
                    "mesh: tagged edge is not a boundary edge of the triangulation");
            require(++tagged[key] == 1, "mesh: boundary edge tagged twice");
            any_dirichlet = any_dirichlet || e.tag == BoundaryTag::Dirichlet;
        }
        for (const auto& [key, count] : edge_count) {
            if (count == 1) require(tagged.count(key) == 1, "mesh: untagged boundary edge");
            require(count <= 2, "mesh: non-manifold edge");
        }
        require(any_dirichlet, "mesh: Dirichlet part of the boundary must be nonempty");

        // Tag changes are only admitted at right angles.
        std::map<Index, std::vector<const BoundaryEdge*>> incident;
        for (const auto& e : boundary_edges_) {
            incident[e.v[0]].push_back(&e);
            incident[e.v[1]].push_back(&e);
        }
        corner_points_.clear();
        for (const auto& [v, edges] : incident) {
            require(edges.size() == 2, "mesh: boundary vertex with " + std::to_string(edges.size()) + " incident edges");
            if (edges[0]->tag == edges[1]->tag) continue;
            auto dir = [&](const BoundaryEdge* e) {
                const Index other = e->v[0] == v ? e->v[1] : e->v[0];
                return Vec2((vertex(other) - vertex(v)).normalized());
            };
            const double c = dir(edges[0]).dot(dir(edges[1]));
            require(std::abs(c) <= 1e-10, "mesh: boundary type changes at a non-right angle at vertex " + std::to_string(v));
            corner_points_.push_back(v);
        }
    }

    std::vector<Vec2> vertices_;
    std::vector<Triangle> triangles_;
    std::vector<BoundaryEdge> boundary_edges_;
    std::vector<Index> corner_points_;
    double h_ = 0.0;
};

namespace detail {

// Breakpoints of [0, 1] with n cells whose sizes grow geometrically by
// `ratio` from both ends towards the middle.
inline std::vector<double> graded_breakpoints(int n, double ratio) {
    std::vector<double> sizes(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const int dist = std::min(k, n - 1 - k);
        sizes[static_cast<std::size_t>(k)] = std::pow(ratio, dist);
    }
    double total = 0.0;
    for (double s : sizes) total += s;
    std::vector<double> x(static_cast<std::size_t>(n + 1), 0.0);
    for (int k = 0; k < n; ++k) x[static_cast<std::size_t>(k + 1)] = x[static_cast<std::size_t>(k)] + sizes[static_cast<std::size_t>(k)] / total;
    x.back() = 1.0;
    return x;
}

}  // namespace detail

struct ChannelGeometry {
    double length = 3.0;
    double height = 1.0;
    int nx = 48;
    int ny = 16;
    /// Geometric cell-size ratio towards the rectangle corners; 1 = uniform.
    double grading = 1.0;
};

/// Structured rectangle mesh, each cell split along alternating diagonals.
inline ChannelMesh build_channel_mesh(const ChannelGeometry& g, const TaggingRule& rule) {
    require(g.length > 0.0 && g.height > 0.0, "build_channel_mesh: length and height must be positive");
    require(g.nx >= 1 && g.ny >= 1, "build_channel_mesh: nx and ny must be positive");
    require(g.grading >= 1.0, "build_channel_mesh: grading ratio must be >= 1");
    const auto xs = detail::graded_breakpoints(g.nx, g.grading);
    const auto ys = detail::graded_breakpoints(g.ny, g.grading);

    std::vector<Vec2> vertices;
    vertices.reserve(static_cast<std::size_t>((g.nx + 1) * (g.ny + 1)));
    for (int j = 0; j <= g.ny; ++j)
        for (int i = 0; i <= g.nx; ++i)
            vertices.emplace_back(g.length * xs[static_cast<std::size_t>(i)], g.height * ys[static_cast<std::size_t>(j)]);

    auto id = [&](int i, int j) { return static_cast<Index>(j * (g.nx + 1) + i); };
    std::vector<Triangle> triangles;
    triangles.reserve(static_cast<std::size_t>(2 * g.nx * g.ny));
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const Index a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
            if ((i + j) % 2 == 0) {
                triangles.push_back({a, b, c});
                triangles.push_back({a, c, d});
            } else {
                triangles.push_back({a, b, d});
                triangles.push_back({b, c, d});
            }
        }
    }

    std::vector<BoundaryEdge> edges;
    auto add = [&](Index a, Index b) {
        edges.push_back({{a, b}, rule(vertices[static_cast<std::size_t>(a)], vertices[static_cast<std::size_t>(b)])});
    };
    for (int i = 0; i < g.nx; ++i) add(id(i, 0), id(i + 1, 0));
    for (int j = 0; j < g.ny; ++j) add(id(g.nx, j), id(g.nx, j + 1));
    for (int i = g.nx; i > 0; --i) add(id(i, g.ny), id(i - 1, g.ny));
    for (int j = g.ny; j > 0; --j) add(id(0, j), id(0, j - 1));

    return ChannelMesh(std::move(vertices), std::move(triangles), std::move(edges));
}

inline ChannelMesh build_channel_mesh(const ChannelGeometry& g) {
    return build_channel_mesh(g, default_channel_tagging(g.length, g.height));
}

/// Uniform red refinement: every triangle is split into four.
inline ChannelMesh refine(const ChannelMesh& mesh) {
    std::vector<Vec2> vertices = mesh.vertices();
    std::map<std::pair<Index, Index>, Index> midpoint;
    auto mid = [&](Index a, Index b) {
        const auto key = std::make_pair(std::min(a, b), std::max(a, b));
        auto it = midpoint.find(key);
        if (it != midpoint.end()) return it->second;
        const Index m = static_cast<Index>(vertices.size());
        vertices.push_back(0.5 * (vertices[static_cast<std::size_t>(a)] + vertices[static_cast<std::size_t>(b)]));
        midpoint.emplace(key, m);
        return m;
    };

    std::vector<Triangle> triangles;
    triangles.reserve(4 * mesh.triangles().size());
    for (const auto& t : mesh.triangles()) {
        const Index ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
        triangles.push_back({t[0], ab, ca});
        triangles.push_back({ab, t[1], bc});
        triangles.push_back({ca, bc, t[2]});
        triangles.push_back({ab, bc, ca});
    }
    std::vector<BoundaryEdge> edges;
    edges.reserve(2 * mesh.boundary_edges().size());
    for (const auto& e : mesh.boundary_edges()) {
        const Index m = mid(e.v[0], e.v[1]);
        edges.push_back({{e.v[0], m}, e.tag});
        edges.push_back({{m, e.v[1]}, e.tag});
    }
    return ChannelMesh(std::move(vertices), std::move(triangles), std::move(edges));
}

inline nlohmann::json to_json(const ChannelMesh& mesh) {
    nlohmann::json j;
    j["schema"] = "mixedns.mesh/1";
    auto& v = j["vertices"] = nlohmann::json::array();
    for (const auto& p : mesh.vertices()) v.push_back({p.x(), p.y()});
    auto& t = j["triangles"] = nlohmann::json::array();
    for (const auto& tri : mesh.triangles()) t.push_back({tri[0], tri[1], tri[2]});
    auto& b = j["boundary_edges"] = nlohmann::json::array();
    for (const auto& e : mesh.boundary_edges()) b.push_back({{"v", {e.v[0], e.v[1]}}, {"tag", to_string(e.tag)}});
    j["corner_points"] = mesh.corner_points();
    j["h"] = mesh.h();
    return j;
}

inline ChannelMesh mesh_from_json(const nlohmann::json& j) {
    std::vector<Vec2> vertices;
    for (const auto& p : j.at("vertices")) vertices.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    std::vector<Triangle> triangles;
    for (const auto& t : j.at("triangles")) triangles.push_back({t.at(0).get<Index>(), t.at(1).get<Index>(), t.at(2).get<Index>()});
    std::vector<BoundaryEdge> edges;
    for (const auto& e : j.at("boundary_edges"))
        edges.push_back({{e.at("v").at(0).get<Index>(), e.at("v").at(1).get<Index>()},
                         boundary_tag_from_string(e.at("tag").get<std::string>())});
    return ChannelMesh(std::move(vertices), std::move(triangles), std::move(edges));
}

/// Legacy VTK unstructured grid. Point data arrays, if given, hold one
/// value (scalars) or two values (vectors) per mesh vertex.
struct VtkPointData {
    std::string name;
    std::vector<double> values;
    int components = 1;
};

inline void write_vtk(std::ostream& os, const ChannelMesh& mesh, const std::vector<VtkPointData>& data = {}) {
    os.precision(17);
    os << "# vtk DataFile Version 3.0\nmixedns channel mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    os << "POINTS " << mesh.num_vertices() << " double\n";
    for (const auto& p : mesh.vertices()) os << p.x() << ' ' << p.y() << " 0\n";
    const Index nt = mesh.num_triangles();
    const Index nb = static_cast<Index>(mesh.boundary_edges().size());
    os << "CELLS " << nt + nb << ' ' << 4 * nt + 3 * nb << '\n';
    for (const auto& t : mesh.triangles()) os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    for (const auto& e : mesh.boundary_edges()) os << "2 " << e.v[0] << ' ' << e.v[1] << '\n';
    os << "CELL_TYPES " << nt + nb << '\n';
    for (Index i = 0; i < nt; ++i) os << "5\n";
    for (Index i = 0; i < nb; ++i) os << "3\n";
    // 0 interior, 1 Dirichlet, 2 Neumann
    os << "CELL_DATA " << nt + nb << "\nSCALARS boundary_tag int 1\nLOOKUP_TABLE default\n";
    for (Index i = 0; i < nt; ++i) os << "0\n";
    for (const auto& e : mesh.boundary_edges()) os << (e.tag == BoundaryTag::Dirichlet ? 1 : 2) << '\n';
    if (data.empty()) return;
    os << "POINT_DATA " << mesh.num_vertices() << '\n';
    for (const auto& d : data) {
        require(static_cast<Index>(d.values.size()) == d.components * mesh.num_vertices(), "write_vtk: point data size mismatch");
        if (d.components == 1) {
            os << "SCALARS " << d.name << " double 1\nLOOKUP_TABLE default\n";
            for (double x : d.values) os << x << '\n';
        } else {
            os << "VECTORS " << d.name << " double\n";
            for (Index i = 0; i < mesh.num_vertices(); ++i)
                os << d.values[static_cast<std::size_t>(2 * i)] << ' ' << d.values[static_cast<std::size_t>(2 * i + 1)] << " 0\n";
        }
    }
}

}  // namespace mixedns
