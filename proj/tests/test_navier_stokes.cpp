#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "mixedns/navier_stokes.hpp"

using namespace mixedns;

namespace {

std::shared_ptr<const EigenBasis> make_basis(int nx, int ny, Index modes) {
    return std::make_shared<const EigenBasis>(compute_eigenbasis(assemble(build_channel_mesh({3.0, 1.0, nx, ny, 1.0})), modes));
}

const NavierStokesModel& model() {
    static const NavierStokesModel m = NavierStokesModel::build(make_basis(12, 4, 8), TimeGrid::uniform(1.0, 16, 4));
    return m;
}

SpectralField random_field(const NavierStokesModel& m, std::mt19937_64& rng, double x_norm) {
    const auto u = solve_stokes_evolution(random_perturbation(m.ctx, rng));
    return u * (x_norm / u.norm_X());
}

// Collapsed (Duffy) tensor Gauss rule on each triangle with direct P2
// evaluation; independent of the library's triangle rule.
double brute_force_b(const DiscreteSpaces& s, const VectorXd& th, const VectorXd& ps, const VectorXd& ph) {
    const LineRule g = gauss_legendre(8);
    double total = 0.0;
    for (std::size_t t = 0; t < s.elements.size(); ++t) {
        const auto& geo = s.elements[t];
        const auto& en = s.element_nodes[t];
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = 0; j < g.size(); ++j) {
                const double x = g.nodes[i], y = g.nodes[j] * (1.0 - x);
                const double w = g.weights[i] * g.weights[j] * (1.0 - x) * 2.0 * geo.area;
                const std::array<double, 3> L{1.0 - x - y, x, y};
                const auto N = p2::values(L);
                const auto dN = p2::gradients(L, geo);
                Vec2 a = Vec2::Zero(), c = Vec2::Zero();
                Eigen::Matrix2d G = Eigen::Matrix2d::Zero();
                for (std::size_t k = 0; k < 6; ++k) {
                    const Vec2 tk(th[2 * en[k]], th[2 * en[k] + 1]);
                    const Vec2 pk(ps[2 * en[k]], ps[2 * en[k] + 1]);
                    const Vec2 fk(ph[2 * en[k]], ph[2 * en[k] + 1]);
                    a += N[k] * tk;
                    c += N[k] * fk;
                    G += pk * dN[k].transpose();
                }
                total += w * c.dot(G * a);
            }
    }
    return total;
}

VectorXd random_vector(Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v[i] = nd(rng);
    return v;
}

}  // namespace

TEST(Trilinear, SimpleExamples) {
    const auto s = assemble(build_channel_mesh({1.0, 1.0, 3, 3, 1.0}));
    const FieldSampler fs(*s);
    const VectorXd theta = interpolate_velocity(*s, [](const Vec2&) { return Vec2(1.0, 0.0); });
    const VectorXd psi = interpolate_velocity(*s, [](const Vec2& p) { return Vec2(p.x(), -p.y()); });
    EXPECT_NEAR(trilinear_b(fs, theta, psi, theta), 1.0, 1e-14);
    EXPECT_EQ(trilinear_b(fs, VectorXd::Zero(s->ndof_v), psi, theta), 0.0);
    EXPECT_THROW(trilinear_b(fs, VectorXd::Zero(2), psi, theta), InvalidArgument);
}

TEST(Trilinear, MatchesIndependentQuadrature) {
    const auto s = assemble(build_channel_mesh({3.0, 1.0, 6, 2, 1.3}));
    const FieldSampler fs(*s);
    std::mt19937_64 rng(21);
    for (int t = 0; t < 5; ++t) {
        const VectorXd a = random_vector(s->ndof_v, rng), b = random_vector(s->ndof_v, rng), c = random_vector(s->ndof_v, rng);
        const double ref = brute_force_b(*s, a, b, c);
        EXPECT_NEAR(trilinear_b(fs, a, b, c), ref, 1e-12 * std::max(1.0, std::abs(ref)));
    }
}

TEST(Trilinear, IsLinearInEachSlot) {
    const auto s = assemble(build_channel_mesh({3.0, 1.0, 6, 2, 1.0}));
    const FieldSampler fs(*s);
    std::mt19937_64 rng(2);
    const VectorXd a = random_vector(s->ndof_v, rng), a2 = random_vector(s->ndof_v, rng);
    const VectorXd b = random_vector(s->ndof_v, rng), c = random_vector(s->ndof_v, rng);
    const double lhs = trilinear_b(fs, 2.0 * a + a2, b, c);
    EXPECT_NEAR(lhs, 2.0 * trilinear_b(fs, a, b, c) + trilinear_b(fs, a2, b, c), 1e-11 * std::abs(lhs));
    const double mid = trilinear_b(fs, a, 3.0 * b - a2, c);
    EXPECT_NEAR(mid, 3.0 * trilinear_b(fs, a, b, c) - trilinear_b(fs, a, a2, c), 1e-11 * std::abs(mid));
    const VectorXd load = convection_load(fs, a, b);
    EXPECT_NEAR(load.dot(c), trilinear_b(fs, a, b, c), 1e-11 * std::abs(load.dot(c)));
}

TEST(Convection, TensorRouteMatchesPhysicalRoute) {
    const auto& m = model();
    const FieldSampler fs(*m.ctx->basis()->spaces);
    std::mt19937_64 rng(6);
    const auto u = random_field(m, rng, 1.0), w = random_field(m, rng, 2.0);
    const DataPair t = convection_data(m, u, w), p = convection_data_physical(m, fs, u, w);
    EXPECT_LT((t.mu - p.mu).cwiseAbs().maxCoeff(), 1e-12 * p.mu.cwiseAbs().maxCoeff());
    EXPECT_EQ(t.a.norm(), 0.0);
}

TEST(Convection, ZeroAndSingleModeCases) {
    const auto& m = model();
    std::mt19937_64 rng(7);
    const auto u = random_field(m, rng, 1.0);
    EXPECT_EQ(convection_data(m, u, SpectralField::zero(m.ctx)).norm_Y(), 0.0);
    // Steady first mode: theta_1 = 1 from a_1 = 1 and forcing lambda_1.
    const Index n = m.ctx->n_modes();
    VectorXd a = VectorXd::Zero(n);
    a[0] = 1.0;
    MatrixXd src = MatrixXd::Zero(n, m.ctx->grid().num_gauss());
    src.row(0).setConstant(m.ctx->lambdas()[0]);
    const SpectralField phi1(m.ctx, a, src);
    EXPECT_LT((phi1.gauss_values().row(0).array() - 1.0).abs().maxCoeff(), 1e-12);
    const auto d = convection_data(m, phi1, phi1);
    const auto& b = *m.ctx->basis();
    const FieldSampler fs(*b.spaces);
    for (Index k = 0; k < n; ++k) {
        const double direct = trilinear_b(fs, b.modes.col(0), b.modes.col(0), b.modes.col(k));
        EXPECT_LT((d.mu.row(k).array() - direct).abs().maxCoeff(), 1e-11) << k;
    }
}

TEST(Operators, NonlinearOperatorStructure) {
    const auto& m = model();
    const auto zero = SpectralField::zero(m.ctx);
    EXPECT_EQ(apply_N(m, zero).norm_Y(), 0.0);
    std::mt19937_64 rng(8);
    const DataPair d = random_perturbation(m.ctx, rng);
    const auto u = solve_stokes_evolution(d);
    const DataPair diff = apply_N(m, u) - apply_S(u);
    EXPECT_EQ(diff.a.norm(), 0.0);
    const DataPair expected = d + convection_data(m, u, u);
    EXPECT_LT((apply_N(m, u) - expected).norm_Y(), 1e-12);
    EXPECT_EQ(apply_B_u(m, u, zero).norm_Y(), 0.0);
    EXPECT_EQ(apply_B_u(m, zero, u).norm_Y(), 0.0);
}

TEST(Operators, FrechetIdentity) {
    const auto& m = model();
    std::mt19937_64 rng(9);
    for (int t = 0; t < 10; ++t) {
        const auto u = random_field(m, rng, 3.0), w = random_field(m, rng, 0.5);
        const DataPair defect = apply_N(m, u + w) - apply_N(m, u) - apply_S(w) - apply_B_u(m, u, w);
        EXPECT_LT((defect - convection_data(m, w, w)).norm_Y(), 1e-10);
    }
}

TEST(Operators, QuadraticBoundConstantStableUnderRefinement) {
    const auto grid = TimeGrid::uniform(1.0, 16, 4);
    const auto coarse = NavierStokesModel::build(make_basis(12, 4, 6), grid);
    const auto fine = NavierStokesModel::build(make_basis(24, 8, 6), grid);
    const double cc = measure_convection_constant(coarse, 20, 1);
    const double cf = measure_convection_constant(fine, 20, 1);
    EXPECT_GT(cc, 0.0);
    EXPECT_LT(std::max(cc, cf) / std::min(cc, cf), 2.0) << cc << " " << cf;
    std::mt19937_64 rng(10);
    for (int t = 0; t < 5; ++t) {
        const auto w = random_field(coarse, rng, 0.7);
        EXPECT_LE(convection_data(coarse, w, w).norm_Y(), 2.0 * cc * w.norm_X() * w.norm_X());
    }
}

TEST(Linearized, ReducesToStokesForZeroState) {
    const auto& m = model();
    std::mt19937_64 rng(11);
    const DataPair r = random_perturbation(m.ctx, rng);
    const auto w = solve_linearized(m, SpectralField::zero(m.ctx), r);
    EXPECT_LT((w - solve_stokes_evolution(r)).norm_X(), 1e-12);
}

TEST(Linearized, RoundTripAndInjectivity) {
    const auto& m = model();
    std::mt19937_64 rng(12);
    for (int t = 0; t < 5; ++t) {
        const auto u = random_field(m, rng, 10.0);
        const DataPair r = random_perturbation(m.ctx, rng);
        const auto w = solve_linearized(m, u, r);
        EXPECT_LT((apply_G_u(m, u, w) - r).norm_Y(), 1e-10);
        EXPECT_LE(solve_linearized(m, u, DataPair::zero(m.ctx)).norm_X(), 1e-8);
    }
}

TEST(Newton, ZeroDataGivesZero) {
    const auto& m = model();
    const auto res = solve_navier_stokes(m, DataPair::zero(m.ctx));
    EXPECT_TRUE(res.report.converged);
    EXPECT_EQ(res.report.newton_iterations, 0);
    EXPECT_EQ(res.solution.norm_X(), 0.0);
}

TEST(Newton, ManufacturedSolutionConvergesQuadratically) {
    const auto& m = model();
    std::mt19937_64 rng(13);
    const auto exact = random_field(m, rng, 100.0);
    const DataPair d = apply_N(m, exact);
    std::vector<double> errors;
    NewtonOptions opt;
    opt.observer = [&](const SpectralField& u) { errors.push_back((u - exact).norm_X()); };
    const auto res = solve_navier_stokes(m, d, opt);
    EXPECT_TRUE(res.report.converged);
    EXPECT_LE(res.report.newton_iterations, 8);
    EXPECT_LE((res.solution - exact).norm_X(), 1e-8);
    std::vector<double> ratios;
    for (std::size_t i = 0; i + 1 < errors.size(); ++i)
        if (errors[i + 1] > 1e-13) ratios.push_back(errors[i + 1] / (errors[i] * errors[i]));
    EXPECT_GE(ratios.size(), 3u);
    for (double r : ratios) EXPECT_LT(r, 1.0);
}

TEST(Newton, SmallDataConvergesFast) {
    const auto& m = model();
    std::mt19937_64 rng(14);
    const DataPair d = scale_to_stokes_norm(random_perturbation(m.ctx, rng), 0.1);
    const auto res = solve_navier_stokes(m, d);
    EXPECT_TRUE(res.report.converged);
    EXPECT_LE(res.report.newton_iterations, 5);
}

TEST(Newton, UniqueAcrossInitialGuesses) {
    const auto& m = model();
    std::mt19937_64 rng(15);
    const DataPair d = scale_to_stokes_norm(random_perturbation(m.ctx, rng), 0.5);
    const auto a = solve_navier_stokes(m, d);
    const auto b = solve_navier_stokes(m, d, {}, SpectralField::zero(m.ctx));
    ASSERT_TRUE(a.report.converged && b.report.converged);
    EXPECT_LT((a.solution - b.solution).norm_X(), 1e-7);
}

TEST(Newton, RejectsInvalidOptions) {
    const auto& m = model();
    NewtonOptions bad;
    bad.max_iters = 0;
    EXPECT_THROW(solve_navier_stokes(m, DataPair::zero(m.ctx), bad), InvalidArgument);
    bad = {};
    bad.damping = 1.5;
    EXPECT_THROW(solve_navier_stokes(m, DataPair::zero(m.ctx), bad), InvalidArgument);
}

TEST(Perturbation, ShiftsScaleLinearly) {
    const auto& m = model();
    std::mt19937_64 rng(16);
    const DataPair base = scale_to_stokes_norm(random_perturbation(m.ctx, rng), 0.1);
    const auto exp = perturbation_experiment(m, base, {0.0, 1e-3, 1e-2}, 3, 77);
    ASSERT_EQ(exp.summary.size(), 3u);
    for (const auto& s : exp.summary) EXPECT_EQ(s.failures, 0);
    for (int t = 0; t < 3; ++t) {
        const auto& z = exp.trials[static_cast<std::size_t>(t)];
        const auto& a = exp.trials[static_cast<std::size_t>(3 + t)];
        const auto& b = exp.trials[static_cast<std::size_t>(6 + t)];
        EXPECT_EQ(z.report.solution_shift, 0.0);
        EXPECT_LT(std::abs(a.shift_ratio - b.shift_ratio), 0.2 * a.shift_ratio);
        EXPECT_LT(std::abs(a.shift_ratio - a.linear_prediction), 0.05 * a.linear_prediction);
    }
    const auto j = to_json(exp.summary[1]);
    for (const char* key : {"scale", "trials", "mean_shift_ratio", "max_iterations", "failures"}) EXPECT_TRUE(j.contains(key));
    std::ostringstream os;
    write_residual_history_csv(os, exp.base_report);
    EXPECT_EQ(os.str().substr(0, 9), "iteration");
}

TEST(Newton, ManufacturedHelperTracksErrors) {
    const auto run = manufactured_newton(model(), 50.0, 21);
    EXPECT_NEAR(run.exact.norm_X(), 50.0, 1e-9);
    EXPECT_EQ(run.errors.size(), run.result.report.residuals.size());
    EXPECT_LE(run.final_error, 1e-8);
    EXPECT_EQ(run.result.report.failure, "");
    EXPECT_THROW(manufactured_newton(model(), 0.0, 1), InvalidArgument);
}

TEST(Newton, BreakdownIsReportedNotThrown) {
    const auto& m = model();
    std::mt19937_64 rng(22);
    const DataPair d = scale_to_stokes_norm(random_perturbation(m.ctx, rng), 1e6);
    const auto res = solve_navier_stokes(m, d);
    EXPECT_FALSE(res.report.converged);
    EXPECT_TRUE(!res.report.failure.empty() || res.report.newton_iterations == NewtonOptions{}.max_iters);
    NewtonOptions strict;
    strict.linear_tol = 1e-300;
    const auto broken = solve_navier_stokes(m, scale_to_stokes_norm(d, 1.0), strict);
    EXPECT_FALSE(broken.report.converged);
    EXPECT_NE(broken.report.failure.find("linearized solve"), std::string::npos);
    EXPECT_EQ(broken.report.newton_iterations, 0);
}
