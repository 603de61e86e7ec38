#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "mixedns/fem_assembly.hpp"

using namespace mixedns;

namespace {

std::shared_ptr<const DiscreteSpaces> unit_square(int n) {
    return assemble(build_channel_mesh({1.0, 1.0, n, n, 1.0}));
}

double pi2() { return pi * pi; }

}  // namespace

TEST(FemAssembly, MassOfConstantFieldIsArea) {
    const auto s = unit_square(4);
    const VectorXd u = interpolate_velocity(*s, [](const Vec2&) { return Vec2(1.0, 0.0); });
    EXPECT_NEAR(inner_L2(*s, u, u), 1.0, 1e-12);
    EXPECT_NEAR(inner_V(*s, u, u), 0.0, 1e-12);
}

TEST(FemAssembly, StiffnessOfLinearShear) {
    const auto s = unit_square(4);
    const VectorXd u = interpolate_velocity(*s, [](const Vec2& p) { return Vec2(p.y(), 0.0); });
    EXPECT_NEAR(inner_V(*s, u, u), 1.0, 1e-12);
}

TEST(FemAssembly, QuadraticFieldsIntegratedExactly) {
    const auto s = unit_square(3);
    const VectorXd u = interpolate_velocity(*s, [](const Vec2& p) { return Vec2(p.x() * p.x(), p.x() * p.y()); });
    // int x^4 + x^2 y^2 ; int |grad|^2 = int 4x^2 + y^2 + x^2
    EXPECT_NEAR(inner_L2(*s, u, u), 1.0 / 5 + 1.0 / 9, 1e-13);
    EXPECT_NEAR(inner_V(*s, u, u), 4.0 / 3 + 1.0 / 3 + 1.0 / 3, 1e-12);
}

TEST(FemAssembly, InnerProductsSymmetricAndPositive) {
    const auto s = assemble(build_channel_mesh({3.0, 1.0, 6, 2, 1.0}));
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 5; ++trial) {
        VectorXd u(s->ndof_v), v(s->ndof_v);
        for (Index i = 0; i < s->ndof_v; ++i) u[i] = nd(rng), v[i] = nd(rng);
        EXPECT_NEAR(inner_V(*s, u, v), inner_V(*s, v, u), 1e-13 * std::abs(inner_V(*s, u, v)) + 1e-13);
        EXPECT_NEAR(inner_L2(*s, u, v), inner_L2(*s, v, u), 1e-13 * std::abs(inner_L2(*s, u, v)) + 1e-13);
        EXPECT_GT(inner_L2(*s, u, u), 0.0);
    }
    EXPECT_DOUBLE_EQ(inner_L2(*s, VectorXd::Zero(s->ndof_v), VectorXd::Zero(s->ndof_v)), 0.0);
    EXPECT_THROW(inner_L2(*s, VectorXd::Zero(3), VectorXd::Zero(3)), InvalidArgument);
    EXPECT_THROW(inner_V(*s, VectorXd::Zero(s->ndof_v), VectorXd::Zero(4)), InvalidArgument);
}

TEST(FemAssembly, FreeStiffnessIsPositiveDefinite) {
    const auto s = assemble(build_channel_mesh({3.0, 1.0, 6, 2, 1.0}));
    const MatrixXd Kd(s->free_block(s->K));
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(Kd);
    EXPECT_GT(es.eigenvalues().minCoeff(), 1e-6);
    const MatrixXd Md(s->free_block(s->M));
    Eigen::SelfAdjointEigenSolver<MatrixXd> em(Md);
    EXPECT_GT(em.eigenvalues().minCoeff(), 0.0);
}

TEST(FemAssembly, DirichletDofsAreExactlyTheWallNodes) {
    const auto s = assemble(build_channel_mesh({3.0, 1.0, 6, 2, 1.0}));
    for (std::size_t n = 0; n < s->nodes.size(); ++n) {
        const bool wall = std::abs(s->nodes[n].y()) < 1e-14 || std::abs(s->nodes[n].y() - 1.0) < 1e-14;
        EXPECT_EQ(s->free_index[2 * n] < 0, wall);
        EXPECT_EQ(s->free_index[2 * n + 1] < 0, wall);
    }
    EXPECT_FALSE(s->pressure_constant_mode);
}

TEST(FemAssembly, DivergenceAndPressureMass) {
    const auto s = unit_square(4);
    const VectorXd u = interpolate_velocity(*s, [](const Vec2& p) { return Vec2(p.x(), 0.0); });
    const VectorXd one = VectorXd::Ones(s->ndof_p);
    EXPECT_NEAR(one.dot(s->B * u), -1.0, 1e-13);
    EXPECT_NEAR(one.dot(s->Mp * one), 1.0, 1e-13);
    // A divergence-free field is annihilated.
    const VectorXd w = interpolate_velocity(*s, [](const Vec2& p) { return Vec2(p.x() * p.y(), -0.5 * p.y() * p.y()); });
    EXPECT_LT((s->B * w).norm(), 1e-13);
}

TEST(FemAssembly, AllDirichletPressureHasConstantNullVector) {
    const auto D = BoundaryTag::Dirichlet;
    const auto mesh = build_channel_mesh({1.0, 1.0, 3, 3, 1.0}, side_tagging(1.0, 1.0, {D, D, D, D}));
    const auto s = assemble(mesh);
    EXPECT_TRUE(s->pressure_constant_mode);
    const SparseMatrix Bf = s->free_divergence();
    EXPECT_LT((SparseMatrix(Bf.transpose()) * VectorXd::Ones(s->ndof_p)).norm(), 1e-13);
    const MatrixXd Bd(Bf);
    Eigen::JacobiSVD<MatrixXd> svd(Bd);
    const auto sv = svd.singularValues();
    EXPECT_LT(sv[sv.size() - 1], 1e-12);
    EXPECT_GT(sv[sv.size() - 2], 1e-6);
}

TEST(FemAssembly, PointLocatorReproducesQuadratics) {
    const auto s = assemble(build_channel_mesh({3.0, 1.0, 6, 2, 1.0}));
    auto f = [](const Vec2& p) { return Vec2(p.x() * p.y() - 0.3 * p.y() * p.y(), 1.0 + p.x() * p.x()); };
    const VectorXd u = interpolate_velocity(*s, f);
    const VectorXd q = interpolate_pressure(*s, [](const Vec2& p) { return 2.0 * p.x() - p.y(); });
    PointLocator loc(s);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ux(0.0, 3.0), uy(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        const Vec2 p(ux(rng), uy(rng));
        EXPECT_NEAR((loc.velocity(u, p) - f(p)).norm(), 0.0, 1e-13);
        const Eigen::Matrix2d G = loc.velocity_gradient(u, p);
        EXPECT_NEAR(G(0, 0), p.y(), 1e-12);
        EXPECT_NEAR(G(0, 1), p.x() - 0.6 * p.y(), 1e-12);
        EXPECT_NEAR(G(1, 0), 2 * p.x(), 1e-12);
        EXPECT_NEAR(loc.pressure(q, p), 2.0 * p.x() - p.y(), 1e-13);
    }
    EXPECT_FALSE(loc.locate(Vec2(4.0, 0.5)).has_value());
}

TEST(FemAssembly, ProlongationToRefinedMeshIsExact) {
    const auto coarse_mesh = build_channel_mesh({3.0, 1.0, 3, 1, 1.0});
    const auto c = assemble(coarse_mesh);
    const auto f = assemble(refine(coarse_mesh));
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    VectorXd u(c->ndof_v);
    for (Index i = 0; i < u.size(); ++i) u[i] = nd(rng);
    PointLocator loc(c);
    const VectorXd uf = prolongate(loc, u, *f);
    EXPECT_NEAR(inner_L2(*f, uf, uf), inner_L2(*c, u, u), 1e-11 * inner_L2(*c, u, u));
    EXPECT_NEAR(inner_V(*f, uf, uf), inner_V(*c, u, u), 1e-11 * inner_V(*c, u, u));
}

TEST(FemAssembly, MatrixMarketExport) {
    const auto s = unit_square(1);
    std::ostringstream os;
    write_matrix_market(os, s->Mp);
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header, "%%MatrixMarket matrix coordinate real general");
    Index r = 0, c = 0, nnz = 0;
    is >> r >> c >> nnz;
    EXPECT_EQ(r, 4);
    EXPECT_EQ(c, 4);
    EXPECT_EQ(nnz, s->Mp.nonZeros());
}

// Separation of variables on (0,L)x(0,1), Dirichlet at y in {0,1}, Neumann at
// x in {0,L}: eigenvalues (m pi / L)^2 + (n pi)^2 with n >= 1, m >= 0.
TEST(FemAssembly, ScalarLaplaceEigenvaluesConverge) {
    const double L = 3.0;
    std::vector<double> exact;
    for (int m = 0; m < 8; ++m)
        for (int n = 1; n < 4; ++n) exact.push_back(std::pow(m * pi / L, 2) + n * n * pi2());
    std::sort(exact.begin(), exact.end());
    const int k_check = 5;

    std::vector<std::vector<double>> err;
    for (int level = 0; level < 3; ++level) {
        const int f = 2 << level;
        const auto s = assemble(build_channel_mesh({L, 1.0, 3 * f, f, 1.0}));
        const auto sc = assemble_scalar(*s);
        Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(MatrixXd(sc.K), MatrixXd(sc.M));
        std::vector<double> e;
        for (int k = 0; k < k_check; ++k) e.push_back(std::abs(es.eigenvalues()[k] - exact[static_cast<std::size_t>(k)]));
        err.push_back(e);
    }
    for (int k = 0; k < k_check; ++k) {
        const double rate = std::log2(err[1][static_cast<std::size_t>(k)] / err[2][static_cast<std::size_t>(k)]);
        EXPECT_GE(rate, 2.0) << "mode " << k;
        EXPECT_LT(err[2][static_cast<std::size_t>(k)], 1e-2 * exact[static_cast<std::size_t>(k)]);
    }
}

TEST(FemAssembly, InfSupConstantBoundedAwayFromZero) {
    const auto coarse = assemble(build_channel_mesh({3.0, 1.0, 12, 4, 1.0}));
    const auto fine = assemble(build_channel_mesh({3.0, 1.0, 24, 8, 1.0}));
    const double b0 = inf_sup_constant(*coarse);
    const double b1 = inf_sup_constant(*fine);
    EXPECT_GT(b0, 0.1);
    EXPECT_GT(b1, 0.1);
    EXPECT_LT(b1, 1.0);
}
