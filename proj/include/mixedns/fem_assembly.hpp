#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "mixedns/common.hpp"
#include "mixedns/mesh.hpp"
#include "mixedns/quadrature.hpp"

namespace mixedns {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Geometry of one triangle: area and constant barycentric gradients.
struct ElementGeometry {
    std::array<Vec2, 3> corners;
    double area = 0.0;
    std::array<Vec2, 3> grad_bary;

    explicit ElementGeometry(const std::array<Vec2, 3>& p) : corners(p) {
        const double det = (p[1].x() - p[0].x()) * (p[2].y() - p[0].y()) - (p[2].x() - p[0].x()) * (p[1].y() - p[0].y());
        area = 0.5 * det;
        for (int i = 0; i < 3; ++i) {
            const Vec2& a = p[static_cast<std::size_t>((i + 1) % 3)];
            const Vec2& b = p[static_cast<std::size_t>((i + 2) % 3)];
            grad_bary[static_cast<std::size_t>(i)] = Vec2(a.y() - b.y(), b.x() - a.x()) / det;
        }
    }

    Vec2 point(const std::array<double, 3>& L) const { return L[0] * corners[0] + L[1] * corners[1] + L[2] * corners[2]; }
};

/// Quadratic Lagrange shape functions. Local order: the three vertices,
/// then the midpoints of edges (0,1), (1,2), (2,0).
namespace p2 {

inline constexpr std::array<std::array<int, 2>, 3> edge_vertices{{{0, 1}, {1, 2}, {2, 0}}};

inline std::array<double, 6> values(const std::array<double, 3>& L) {
    return {L[0] * (2 * L[0] - 1), L[1] * (2 * L[1] - 1), L[2] * (2 * L[2] - 1),
            4 * L[0] * L[1], 4 * L[1] * L[2], 4 * L[2] * L[0]};
}

inline std::array<Vec2, 6> gradients(const std::array<double, 3>& L, const ElementGeometry& g) {
    std::array<Vec2, 6> d;
    for (std::size_t i = 0; i < 3; ++i) d[i] = (4 * L[i] - 1) * g.grad_bary[i];
    for (std::size_t e = 0; e < 3; ++e) {
        const auto a = static_cast<std::size_t>(edge_vertices[e][0]);
        const auto b = static_cast<std::size_t>(edge_vertices[e][1]);
        d[3 + e] = 4 * (L[a] * g.grad_bary[b] + L[b] * g.grad_bary[a]);
    }
    return d;
}

}  // namespace p2

/// Discrete velocity/pressure spaces on a mesh: continuous P2 velocity,
/// continuous P1 pressure. Velocity dof of P2 node n, component c is 2n+c;
/// pressure dofs are the mesh vertices. Matrices are assembled on all dofs;
/// Dirichlet dofs are eliminated by the free-dof restrictions.
struct DiscreteSpaces {
    std::shared_ptr<const ChannelMesh> mesh;
    std::vector<Vec2> nodes;
    std::vector<std::array<Index, 6>> element_nodes;
    std::vector<ElementGeometry> elements;

    SparseMatrix M;   ///< velocity mass
    SparseMatrix K;   ///< velocity stiffness, gradient-gradient
    SparseMatrix B;   ///< -(q, div v): pressure rows, velocity columns
    SparseMatrix Mp;  ///< pressure mass

    std::vector<Index> dirichlet_dofs;
    std::vector<Index> free_dofs;
    std::vector<Index> free_index;  ///< dof -> position among free dofs, or -1
    Index ndof_v = 0;
    Index ndof_p = 0;
    /// No Neumann boundary: pressure is determined up to a constant.
    bool pressure_constant_mode = false;

    Index num_free() const { return static_cast<Index>(free_dofs.size()); }

    VectorXd restrict_to_free(const VectorXd& u) const {
        require(u.size() == ndof_v, "restrict_to_free: dimension mismatch");
        VectorXd r(num_free());
        for (Index i = 0; i < num_free(); ++i) r[i] = u[free_dofs[static_cast<std::size_t>(i)]];
        return r;
    }

    VectorXd extend_from_free(const VectorXd& r) const {
        require(r.size() == num_free(), "extend_from_free: dimension mismatch");
        VectorXd u = VectorXd::Zero(ndof_v);
        for (Index i = 0; i < num_free(); ++i) u[free_dofs[static_cast<std::size_t>(i)]] = r[i];
        return u;
    }

    MatrixXd extend_from_free(const MatrixXd& r) const {
        require(r.rows() == num_free(), "extend_from_free: dimension mismatch");
        MatrixXd u = MatrixXd::Zero(ndof_v, r.cols());
        for (Index i = 0; i < num_free(); ++i) u.row(free_dofs[static_cast<std::size_t>(i)]) = r.row(i);
        return u;
    }

    /// Velocity-velocity matrix with Dirichlet rows and columns removed.
    SparseMatrix free_block(const SparseMatrix& A) const {
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(A.nonZeros()));
        for (Index c = 0; c < A.outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(A, c); it; ++it) {
                const Index i = free_index[static_cast<std::size_t>(it.row())];
                const Index j = free_index[static_cast<std::size_t>(it.col())];
                if (i >= 0 && j >= 0) trip.emplace_back(i, j, it.value());
            }
        SparseMatrix R(num_free(), num_free());
        R.setFromTriplets(trip.begin(), trip.end());
        return R;
    }

    /// Divergence matrix with Dirichlet columns removed.
    SparseMatrix free_divergence() const {
        std::vector<Eigen::Triplet<double>> trip;
        for (Index c = 0; c < B.outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(B, c); it; ++it) {
                const Index j = free_index[static_cast<std::size_t>(it.col())];
                if (j >= 0) trip.emplace_back(it.row(), j, it.value());
            }
        SparseMatrix R(ndof_p, num_free());
        R.setFromTriplets(trip.begin(), trip.end());
        return R;
    }
};

namespace detail {

struct P2Numbering {
    std::vector<Vec2> nodes;
    std::vector<std::array<Index, 6>> element_nodes;
    std::map<std::pair<Index, Index>, Index> edge_node;
};

inline P2Numbering number_p2_nodes(const ChannelMesh& mesh) {
    P2Numbering n;
    n.nodes = mesh.vertices();
    for (const auto& t : mesh.triangles()) {
        std::array<Index, 6> en{t[0], t[1], t[2], 0, 0, 0};
        for (std::size_t e = 0; e < 3; ++e) {
            const Index a = t[static_cast<std::size_t>(p2::edge_vertices[e][0])];
            const Index b = t[static_cast<std::size_t>(p2::edge_vertices[e][1])];
            const auto key = std::make_pair(std::min(a, b), std::max(a, b));
            auto it = n.edge_node.find(key);
            if (it == n.edge_node.end()) {
                it = n.edge_node.emplace(key, static_cast<Index>(n.nodes.size())).first;
                n.nodes.push_back(0.5 * (mesh.vertex(a) + mesh.vertex(b)));
            }
            en[3 + e] = it->second;
        }
        n.element_nodes.push_back(en);
    }
    return n;
}

}  // namespace detail

/// Assembles mass, stiffness, divergence and pressure-mass matrices.
inline std::shared_ptr<const DiscreteSpaces> assemble(std::shared_ptr<const ChannelMesh> mesh) {
    require(mesh && mesh->num_triangles() > 0, "assemble: empty mesh");
    auto out = std::make_shared<DiscreteSpaces>();
    DiscreteSpaces& s = *out;
    s.mesh = mesh;
    auto numbering = detail::number_p2_nodes(*mesh);
    s.nodes = std::move(numbering.nodes);
    s.element_nodes = std::move(numbering.element_nodes);
    const Index nn = static_cast<Index>(s.nodes.size());
    s.ndof_v = 2 * nn;
    s.ndof_p = mesh->num_vertices();

    const auto& rule = triangle_rule_degree5();
    std::vector<Eigen::Triplet<double>> tm, tk, tb, tp;
    for (Index t = 0; t < mesh->num_triangles(); ++t) {
        const auto& tri = mesh->triangles()[static_cast<std::size_t>(t)];
        s.elements.emplace_back(std::array<Vec2, 3>{mesh->vertex(tri[0]), mesh->vertex(tri[1]), mesh->vertex(tri[2])});
        const ElementGeometry& g = s.elements.back();
        const auto& en = s.element_nodes[static_cast<std::size_t>(t)];
        Eigen::Matrix<double, 6, 6> mloc = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 6> kloc = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 3, 12> bloc = Eigen::Matrix<double, 3, 12>::Zero();
        Eigen::Matrix3d ploc = Eigen::Matrix3d::Zero();
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const double w = rule.weights[q] * g.area;
            const auto& L = rule.points[q];
            const auto N = p2::values(L);
            const auto dN = p2::gradients(L, g);
            for (int a = 0; a < 6; ++a)
                for (int b = 0; b < 6; ++b) {
                    mloc(a, b) += w * N[static_cast<std::size_t>(a)] * N[static_cast<std::size_t>(b)];
                    kloc(a, b) += w * dN[static_cast<std::size_t>(a)].dot(dN[static_cast<std::size_t>(b)]);
                }
            for (int i = 0; i < 3; ++i) {
                for (int a = 0; a < 6; ++a)
                    for (int c = 0; c < 2; ++c) bloc(i, 2 * a + c) -= w * L[static_cast<std::size_t>(i)] * dN[static_cast<std::size_t>(a)][c];
                for (int j = 0; j < 3; ++j) ploc(i, j) += w * L[static_cast<std::size_t>(i)] * L[static_cast<std::size_t>(j)];
            }
        }
        for (int a = 0; a < 6; ++a)
            for (int b = 0; b < 6; ++b)
                for (int c = 0; c < 2; ++c) {
                    const Index ia = 2 * en[static_cast<std::size_t>(a)] + c, ib = 2 * en[static_cast<std::size_t>(b)] + c;
                    tm.emplace_back(ia, ib, mloc(a, b));
                    tk.emplace_back(ia, ib, kloc(a, b));
                }
        for (int i = 0; i < 3; ++i) {
            for (int a = 0; a < 6; ++a)
                for (int c = 0; c < 2; ++c) tb.emplace_back(tri[static_cast<std::size_t>(i)], 2 * en[static_cast<std::size_t>(a)] + c, bloc(i, 2 * a + c));
            for (int j = 0; j < 3; ++j) tp.emplace_back(tri[static_cast<std::size_t>(i)], tri[static_cast<std::size_t>(j)], ploc(i, j));
        }
    }
    s.M.resize(s.ndof_v, s.ndof_v);
    s.M.setFromTriplets(tm.begin(), tm.end());
    s.K.resize(s.ndof_v, s.ndof_v);
    s.K.setFromTriplets(tk.begin(), tk.end());
    s.B.resize(s.ndof_p, s.ndof_v);
    s.B.setFromTriplets(tb.begin(), tb.end());
    s.Mp.resize(s.ndof_p, s.ndof_p);
    s.Mp.setFromTriplets(tp.begin(), tp.end());

    std::vector<char> pinned(static_cast<std::size_t>(nn), 0);
    bool any_neumann = false;
    for (const auto& e : mesh->boundary_edges()) {
        if (e.tag == BoundaryTag::Neumann) {
            any_neumann = true;
            continue;
        }
        const auto key = std::make_pair(std::min(e.v[0], e.v[1]), std::max(e.v[0], e.v[1]));
        pinned[static_cast<std::size_t>(e.v[0])] = pinned[static_cast<std::size_t>(e.v[1])] = 1;
        pinned[static_cast<std::size_t>(numbering.edge_node.at(key))] = 1;
    }
    s.pressure_constant_mode = !any_neumann;
    s.free_index.assign(static_cast<std::size_t>(s.ndof_v), -1);
    for (Index n = 0; n < nn; ++n)
        for (Index c = 0; c < 2; ++c) {
            const Index dof = 2 * n + c;
            if (pinned[static_cast<std::size_t>(n)]) {
                s.dirichlet_dofs.push_back(dof);
            } else {
                s.free_index[static_cast<std::size_t>(dof)] = static_cast<Index>(s.free_dofs.size());
                s.free_dofs.push_back(dof);
            }
        }
    return out;
}

inline std::shared_ptr<const DiscreteSpaces> assemble(const ChannelMesh& mesh) {
    return assemble(std::make_shared<const ChannelMesh>(mesh));
}

/// L2 inner product u^T M v of two velocity coefficient vectors.
inline double inner_L2(const DiscreteSpaces& s, const VectorXd& u, const VectorXd& v) {
    require(u.size() == s.ndof_v && v.size() == s.ndof_v, "inner_L2: dimension mismatch");
    return u.dot(s.M * v);
}

/// Gradient inner product ((u, v)) = u^T K v.
inline double inner_V(const DiscreteSpaces& s, const VectorXd& u, const VectorXd& v) {
    require(u.size() == s.ndof_v && v.size() == s.ndof_v, "inner_V: dimension mismatch");
    return u.dot(s.K * v);
}

inline VectorXd interpolate_velocity(const DiscreteSpaces& s, const std::function<Vec2(const Vec2&)>& f) {
    VectorXd u(s.ndof_v);
    for (std::size_t n = 0; n < s.nodes.size(); ++n) {
        const Vec2 v = f(s.nodes[n]);
        u[static_cast<Index>(2 * n)] = v.x();
        u[static_cast<Index>(2 * n + 1)] = v.y();
    }
    return u;
}

inline VectorXd interpolate_pressure(const DiscreteSpaces& s, const std::function<double(const Vec2&)>& f) {
    VectorXd q(s.ndof_p);
    for (Index i = 0; i < s.ndof_p; ++i) q[i] = f(s.mesh->vertex(i));
    return q;
}

/// Finds the triangle containing a point using a uniform bucket grid.
class PointLocator {
 public:
    explicit PointLocator(std::shared_ptr<const DiscreteSpaces> spaces) : s_(std::move(spaces)) {
        const auto [lo, hi] = s_->mesh->bounding_box();
        lo_ = lo;
        const double cell = std::max(s_->mesh->h(), 1e-12);
        nx_ = std::max<Index>(1, static_cast<Index>(std::ceil((hi.x() - lo.x()) / cell)));
        ny_ = std::max<Index>(1, static_cast<Index>(std::ceil((hi.y() - lo.y()) / cell)));
        dx_ = (hi.x() - lo.x()) / static_cast<double>(nx_);
        dy_ = (hi.y() - lo.y()) / static_cast<double>(ny_);
        buckets_.resize(static_cast<std::size_t>(nx_ * ny_));
        for (std::size_t t = 0; t < s_->elements.size(); ++t) {
            const auto& c = s_->elements[t].corners;
            const Vec2 a = c[0].cwiseMin(c[1]).cwiseMin(c[2]), b = c[0].cwiseMax(c[1]).cwiseMax(c[2]);
            const auto [i0, j0] = bucket(a);
            const auto [i1, j1] = bucket(b);
            for (Index j = j0; j <= j1; ++j)
                for (Index i = i0; i <= i1; ++i) buckets_[static_cast<std::size_t>(j * nx_ + i)].push_back(static_cast<Index>(t));
        }
    }

    struct Hit {
        Index triangle;
        std::array<double, 3> bary;
    };

    std::optional<Hit> locate(const Vec2& p, double tol = 1e-10) const {
        const auto [i, j] = bucket(p);
        for (Index t : buckets_[static_cast<std::size_t>(j * nx_ + i)]) {
            const auto& g = s_->elements[static_cast<std::size_t>(t)];
            std::array<double, 3> L{};
            for (std::size_t k = 0; k < 3; ++k) L[k] = 1.0 / 3.0 + g.grad_bary[k].dot(p - centroid(g));
            if (L[0] >= -tol && L[1] >= -tol && L[2] >= -tol) return Hit{t, L};
        }
        return std::nullopt;
    }

    const DiscreteSpaces& spaces() const { return *s_; }

    Vec2 velocity(const VectorXd& u, const Vec2& p) const {
        const Hit h = must_locate(p);
        const auto N = p2::values(h.bary);
        const auto& en = s_->element_nodes[static_cast<std::size_t>(h.triangle)];
        Vec2 v = Vec2::Zero();
        for (std::size_t a = 0; a < 6; ++a) v += N[a] * Vec2(u[2 * en[a]], u[2 * en[a] + 1]);
        return v;
    }

    /// Row i holds the gradient of velocity component i.
    Eigen::Matrix2d velocity_gradient(const VectorXd& u, const Vec2& p) const {
        const Hit h = must_locate(p);
        const auto& g = s_->elements[static_cast<std::size_t>(h.triangle)];
        const auto dN = p2::gradients(h.bary, g);
        const auto& en = s_->element_nodes[static_cast<std::size_t>(h.triangle)];
        Eigen::Matrix2d G = Eigen::Matrix2d::Zero();
        for (std::size_t a = 0; a < 6; ++a) {
            G.row(0) += u[2 * en[a]] * dN[a].transpose();
            G.row(1) += u[2 * en[a] + 1] * dN[a].transpose();
        }
        return G;
    }

    double pressure(const VectorXd& q, const Vec2& p) const {
        const Hit h = must_locate(p);
        const auto& tri = s_->mesh->triangles()[static_cast<std::size_t>(h.triangle)];
        return h.bary[0] * q[tri[0]] + h.bary[1] * q[tri[1]] + h.bary[2] * q[tri[2]];
    }

 private:
    static Vec2 centroid(const ElementGeometry& g) { return (g.corners[0] + g.corners[1] + g.corners[2]) / 3.0; }

    std::pair<Index, Index> bucket(const Vec2& p) const {
        auto clamp = [](double v, Index n) { return std::clamp<Index>(static_cast<Index>(std::floor(v)), 0, n - 1); };
        return {clamp((p.x() - lo_.x()) / dx_, nx_), clamp((p.y() - lo_.y()) / dy_, ny_)};
    }

    Hit must_locate(const Vec2& p) const {
        auto h = locate(p);
        if (!h) throw InvalidArgument("PointLocator: point outside the mesh");
        return *h;
    }

    std::shared_ptr<const DiscreteSpaces> s_;
    Vec2 lo_;
    Index nx_ = 1, ny_ = 1;
    double dx_ = 1.0, dy_ = 1.0;
    std::vector<std::vector<Index>> buckets_;
};

/// Transfers a velocity field to another mesh by nodal interpolation;
/// exact when the target mesh is a refinement of the source mesh.
inline VectorXd prolongate(const PointLocator& from, const VectorXd& u, const DiscreteSpaces& to) {
    return interpolate_velocity(to, [&](const Vec2& p) { return from.velocity(u, p); });
}

/// Coordinate-format (Matrix Market) text export.
inline void write_matrix_market(std::ostream& os, const SparseMatrix& A) {
    os.precision(17);
    os << "%%MatrixMarket matrix coordinate real general\n";
    os << A.rows() << ' ' << A.cols() << ' ' << A.nonZeros() << '\n';
    for (Index c = 0; c < A.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(A, c); it; ++it) os << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
}

/// Scalar P2 mass and stiffness with homogeneous Dirichlet nodes on the
/// Dirichlet part of the boundary; used to validate the discretisation
/// against separable Laplace eigenvalues.
struct ScalarSpaces {
    SparseMatrix M, K;
    std::vector<Index> free_nodes;
};

inline ScalarSpaces assemble_scalar(const DiscreteSpaces& s) {
    ScalarSpaces out;
    const Index nn = static_cast<Index>(s.nodes.size());
    std::vector<Index> map(static_cast<std::size_t>(nn), -1);
    for (Index n = 0; n < nn; ++n)
        if (s.free_index[static_cast<std::size_t>(2 * n)] >= 0) {
            map[static_cast<std::size_t>(n)] = static_cast<Index>(out.free_nodes.size());
            out.free_nodes.push_back(n);
        }
    std::vector<Eigen::Triplet<double>> tm, tk;
    for (Index c = 0; c < s.M.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(s.M, c); it; ++it) {
            if (it.row() % 2 != 0 || it.col() % 2 != 0) continue;
            const Index i = map[static_cast<std::size_t>(it.row() / 2)], j = map[static_cast<std::size_t>(it.col() / 2)];
            if (i >= 0 && j >= 0) tm.emplace_back(i, j, it.value());
        }
    for (Index c = 0; c < s.K.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(s.K, c); it; ++it) {
            if (it.row() % 2 != 0 || it.col() % 2 != 0) continue;
            const Index i = map[static_cast<std::size_t>(it.row() / 2)], j = map[static_cast<std::size_t>(it.col() / 2)];
            if (i >= 0 && j >= 0) tk.emplace_back(i, j, it.value());
        }
    const Index nf = static_cast<Index>(out.free_nodes.size());
    out.M.resize(nf, nf);
    out.M.setFromTriplets(tm.begin(), tm.end());
    out.K.resize(nf, nf);
    out.K.setFromTriplets(tk.begin(), tk.end());
    return out;
}

/// Discrete inf-sup constant: sqrt of the smallest generalized eigenvalue
/// of (B K^-1 B^T, Mp) on free velocity dofs. The constant-pressure mode is
/// skipped when the pressure is only determined up to a constant.
inline double inf_sup_constant(const DiscreteSpaces& s) {
    const SparseMatrix Kf = s.free_block(s.K);
    const SparseMatrix Bf = s.free_divergence();
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(Kf);
    if (ldlt.info() != Eigen::Success) throw NumericalError("inf_sup_constant: stiffness factorisation failed");
    const MatrixXd BtDense = MatrixXd(SparseMatrix(Bf.transpose()));
    const MatrixXd X = ldlt.solve(BtDense);
    MatrixXd S = Bf * X;
    S = 0.5 * (S + S.transpose()).eval();
    const MatrixXd Mp = MatrixXd(s.Mp);
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(S, Mp);
    if (es.info() != Eigen::Success) throw NumericalError("inf_sup_constant: eigensolver failed");
    const Index k = s.pressure_constant_mode ? 1 : 0;
    return std::sqrt(std::max(0.0, es.eigenvalues()[k]));
}

}  // namespace mixedns
