#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "mixedns/corner_spectra.hpp"
#include "mixedns/stokes_basis.hpp"

using namespace mixedns;

namespace {

// Phase tracking along a densely sampled rectangle boundary.
int winding_by_phase(const Rect& r, int per_unit) {
    const std::array<Complex, 4> c{Complex(r.re_lo, r.im_lo), Complex(r.re_hi, r.im_lo), Complex(r.re_hi, r.im_hi),
                                   Complex(r.re_lo, r.im_hi)};
    double total = 0.0;
    for (std::size_t s = 0; s < 4; ++s) {
        const Complex a = c[s], b = c[(s + 1) % 4];
        const int n = std::max(64, static_cast<int>(std::abs(b - a) * per_unit));
        Complex prev = reduced_characteristic(a);
        for (int k = 1; k <= n; ++k) {
            const Complex cur = reduced_characteristic(a + (b - a) * (static_cast<double>(k) / n));
            total += std::arg(cur / prev);
            prev = cur;
        }
    }
    return static_cast<int>(std::lround(total / (2.0 * pi)));
}

std::array<Complex, 3> ode_residual(Complex lambda, const std::array<Complex, 4>& C, double omega) {
    const Complex z = I_unit * lambda;
    auto w1 = [&](Complex w) { return general_solution(lambda, C, w).w1; };
    auto w2 = [&](Complex w) { return general_solution(lambda, C, w).w2; };
    auto q = [&](Complex w) { return general_solution(lambda, C, w).q; };
    const Complex om(omega, 0.0);
    const Complex cw = std::cos(om), sw = std::sin(om);
    const Complex e1 = w1(om), e2 = w2(om), Q = q(om);
    const Complex e1p = cauchy_derivative(w1, om, 1), e2p = cauchy_derivative(w2, om, 1), Qp = cauchy_derivative(q, om, 1);
    const Complex e1pp = cauchy_derivative(w1, om, 2), e2pp = cauchy_derivative(w2, om, 2);
    return {-e1pp - z * z * e1 + (z - 1.0) * Q * cw - Qp * sw, -e2pp - z * z * e2 + (z - 1.0) * Q * sw + Qp * cw,
            z * e1 * cw - e1p * sw + z * e2 * sw + e2p * cw};
}

}  // namespace

TEST(GeneralSolution, ZeroParameterThirdColumn) {
    for (double w : {0.0, 0.3, 1.2, pi / 2.0}) {
        const auto g = general_solution(0.0, {0.0, 0.0, 1.0, 0.0}, w);
        EXPECT_EQ(g.w1, Complex(1.0));
        EXPECT_EQ(g.w2, Complex(0.0));
        EXPECT_EQ(g.q, Complex(0.0));
    }
}

TEST(GeneralSolution, FirstColumnAtOrigin) {
    const auto g = general_solution(Complex(0.0, -1.0), {1.0, 0.0, 0.0, 0.0}, 0.0);
    EXPECT_NEAR(std::abs(g.w1 - 1.0), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(g.w2), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(g.q), 0.0, 1e-15);
}

TEST(GeneralSolution, SolvesAngularSystem) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0), w(0.0, pi / 2.0);
    for (int t = 0; t < 20; ++t) {
        const Complex lambda(2.0 * u(rng), 2.0 * u(rng));
        const std::array<Complex, 4> C{Complex(u(rng), u(rng)), Complex(u(rng), u(rng)), Complex(u(rng), u(rng)),
                                       Complex(u(rng), u(rng))};
        for (const auto& r : ode_residual(lambda, C, w(rng))) EXPECT_LE(std::abs(r), 1e-10);
    }
    for (const auto& r : ode_residual(0.0, {1.0, -0.5, 0.2, 0.7}, 0.4)) EXPECT_LE(std::abs(r), 1e-10);
}

TEST(PencilMatrix, FirstRowAtSimpleRoot) {
    const auto D = pencil_matrix(Complex(0.0, -1.0));
    EXPECT_NEAR(std::abs(D(0, 0)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(D(0, 1) - 3.0), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(D(0, 2)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(D(0, 3) + 1.0), 0.0, 1e-15);
}

TEST(PencilMatrix, RejectsZero) { EXPECT_THROW(pencil_matrix(0.0), InvalidArgument); }

TEST(PencilMatrix, DeterminantProportionalToReducedCharacteristic) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> re(-3.0, 3.0), im(-0.95, -0.05);
    std::vector<Complex> ratios;
    for (int t = 0; t < 50; ++t) {
        const auto s = sample_pencil(Complex(re(rng), im(rng)));
        ratios.push_back(s.det_full / s.det_reduced);
    }
    const Complex ref = ratios.front();
    double spread = 0.0;
    for (const auto& r : ratios) spread = std::max(spread, std::abs(r - ref) / std::abs(ref));
    EXPECT_LE(spread, 1e-8);
    EXPECT_NEAR(std::abs(ref + 4.0), 0.0, 1e-9);
}

TEST(PencilMatrix, DoubleConstruction) {
    for (const Complex lambda : {Complex(0.0, -2.0), Complex(0.7, -0.4), Complex(-1.3, 0.6)}) {
        const Matrix4c direct = pencil_matrix(lambda);
        const Matrix4c built = normalise_boundary_matrix(boundary_operator_matrix(lambda), lambda);
        EXPECT_LE((direct - built).cwiseAbs().maxCoeff(), 1e-12) << lambda;
    }
}

TEST(PencilMatrix, BoundaryOperatorDeterminant) {
    // det of the unnormalised boundary matrix is -z^2 times the reduced form.
    const Complex lambda(0.4, -0.3), z = I_unit * lambda;
    const Complex det = boundary_operator_matrix(lambda).determinant();
    EXPECT_NEAR(std::abs(det + z * z * reduced_characteristic(lambda)), 0.0, 1e-11);
}

TEST(ReducedCharacteristic, KnownValues) {
    EXPECT_LE(std::abs(reduced_characteristic(Complex(0.0, -1.0))), 1e-14);
    EXPECT_NEAR(std::abs(reduced_characteristic(0.0) + 4.0), 0.0, 1e-15);
    EXPECT_LE(std::abs(reduced_characteristic(Complex(0.0, -2.0))), 1e-14);
}

TEST(ReducedCharacteristic, MatchesLiteralForm) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    for (int t = 0; t < 100; ++t) {
        const Complex l(u(rng), u(rng));
        const Complex a = reduced_characteristic(l), b = reduced_characteristic_literal(l);
        EXPECT_LE(std::abs(a - b), 1e-11 * std::max(1.0, std::abs(a)));
    }
}

TEST(ReducedCharacteristic, DerivativeMatchesCauchy) {
    for (const Complex l : {Complex(0.0, -1.0), Complex(1.5, -0.3), Complex(-2.0, 0.8)}) {
        const Complex d = cauchy_derivative(reduced_characteristic, l, 1);
        EXPECT_NEAR(std::abs(d - reduced_characteristic_derivative(l)), 0.0, 1e-10);
    }
    EXPECT_NEAR(std::abs(reduced_characteristic_derivative(Complex(0.0, -1.0))), 2.0, 1e-14);
}

TEST(ReducedCharacteristic, ConjugateSymmetry) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int t = 0; t < 100; ++t) {
        const double a = u(rng), b = u(rng);
        const Complex lhs = reduced_characteristic(Complex(-a, b)), rhs = std::conj(reduced_characteristic(Complex(a, b)));
        EXPECT_LE(std::abs(lhs - rhs), 1e-12 * std::max(1.0, std::abs(lhs)));
    }
}

TEST(RealImagSystem, Examples) {
    const auto [r1, r2] = real_imag_system(0.0, -1.0);
    EXPECT_NEAR(r1, 0.0, 1e-15);
    EXPECT_NEAR(r2, 0.0, 1e-15);
    EXPECT_NEAR(real_imag_system(0.0, -0.5).first, -2.25, 1e-15);
}

TEST(RealImagSystem, MatchesComplexEvaluation) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int t = 0; t < 100; ++t) {
        const double a = u(rng), b = u(rng);
        const Complex d = reduced_characteristic(Complex(a, b));
        const auto [r1, r2] = real_imag_system(a, b);
        const double scale = std::max(1.0, std::abs(d));
        EXPECT_NEAR(r1, d.real(), 1e-12 * scale);
        EXPECT_NEAR(r2, d.imag(), 1e-12 * scale);
    }
}

TEST(CountRoots, DefaultStripHasOneRoot) {
    const Rect strip;
    const auto w = count_roots(strip);
    EXPECT_EQ(w.count, 1);
    EXPECT_LE(std::abs(w.raw - 1.0), 0.01);
    EXPECT_EQ(winding_by_phase(strip, 400), 1);
}

TEST(CountRoots, WindowsAgreeWithPhaseTracking) {
    const std::vector<std::pair<Rect, int>> cases{{Rect{-20.0, 20.0, -0.9, -0.1}, 0},
                                                  {Rect{-1.0, 1.0, -2.1, -1.9}, 1},
                                                  {Rect{-1.0, 1.0, -2.5, -0.5}, 3},
                                                  {Rect{-5.0, 5.0, -4.5, -3.0}, 2},
                                                  {Rect{-1.0, 1.0, 0.5, 1.5}, 2}};
    for (const auto& [r, expected] : cases) {
        EXPECT_EQ(count_roots(r).count, expected) << r.im_lo << ' ' << r.im_hi;
        EXPECT_EQ(winding_by_phase(r, 400), expected);
    }
}

TEST(CountRoots, ContourThroughRootThrows) {
    EXPECT_THROW(count_roots(Rect{-1.0, 1.0, -1.0, -0.5}), NumericalError);
    EXPECT_THROW(count_roots(Rect{1.0, -1.0, -1.0, -0.5}), InvalidArgument);
}

TEST(FindRoot, SimpleRootAtMinusI) {
    const auto r = find_root(Complex(0.1, -0.8));
    EXPECT_NEAR(std::abs(r.root - Complex(0.0, -1.0)), 0.0, 1e-10);
    EXPECT_LE(r.residual, 1e-12);
    EXPECT_TRUE(r.simple);
    EXPECT_NEAR(r.simplicity, 2.0, 1e-8);
}

TEST(FindRoot, NoRootsInsideOpenStrip) {
    for (const Complex g : {Complex(5.0, -0.5), Complex(-3.0, -0.2), Complex(12.0, -0.9), Complex(0.5, -0.5)}) {
        try {
            const auto r = find_root(g);
            EXPECT_FALSE(r.root.imag() > -1.0 + 1e-9 && r.root.imag() < -1e-9) << r.root;
            EXPECT_LE(std::abs(reduced_characteristic(r.root)), 1e-12);
        } catch (const NumericalError&) {
        }
    }
}

TEST(AnalyzeStrip, WindingEqualsLocatedRoots) {
    for (const Rect& r : {Rect{}, Rect{-1.0, 1.0, -2.5, -0.5}, Rect{-5.0, 5.0, -4.5, -3.0}}) {
        const auto rep = analyze_strip(r);
        EXPECT_EQ(rep.winding_count, static_cast<int>(rep.roots.size()));
        for (const auto& x : rep.roots) EXPECT_TRUE(x.simple);
    }
    const auto rep = analyze_strip(Rect{});
    ASSERT_EQ(rep.roots.size(), 1u);
    EXPECT_NEAR(std::abs(rep.roots[0].root - Complex(0.0, -1.0)), 0.0, 1e-10);
    const auto j = to_json(rep);
    EXPECT_EQ(j["winding_count"], 1);
}

TEST(AnalyzeStrip, DeterminantGridCsv) {
    std::ostringstream os;
    write_determinant_grid_csv(os, Rect{-1.0, 1.0, -1.0, 0.0}, 5, 3);
    std::istringstream is(os.str());
    std::string line;
    int rows = 0;
    std::getline(is, line);
    EXPECT_EQ(line, "re,im,abs_det_full,abs_det_reduced");
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 15);
}

TEST(SingularBasis, PencilKernelAtSimpleRoot) {
    // f2 + f4 is the kernel field with zero velocity on the wall side.
    const auto f = singular_basis(0.7, pi / 2.0);
    const Vec2 k = f[1].velocity + f[3].velocity;
    EXPECT_NEAR(k.norm(), 0.0, 1e-15);
}

TEST(SingularFit, ManufacturedCoefficients) {
    std::vector<CornerSample> samples;
    const double delta = 0.2;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            const double r = delta * (0.2 + 0.1 * i), w = 0.5 * pi * (j + 0.5) / 8.0;
            const double x = r * std::cos(w), y = r * std::sin(w);
            const auto f = singular_basis(r, w);
            const Vec2 smooth(0.3 * x * x - 1.1 * x * y, 0.7 * y * y + 0.2 * x * x);
            const double ps = 0.4 * x - 0.9 * y + 0.25 * x * y;
            samples.push_back({r, w, 2.0 * f[0].velocity + 0.5 * f[2].velocity + smooth, 0.5 * f[2].pressure + ps});
        }
    const auto e = fit_singular_expansion(samples, delta, 2);
    EXPECT_NEAR(e.c[0], 2.0, 1e-6);
    EXPECT_NEAR(e.c[1], 0.0, 1e-6);
    EXPECT_NEAR(e.c[2], 0.5, 1e-6);
    EXPECT_NEAR(e.c[3], 0.0, 1e-6);
    EXPECT_LE(e.fit_residual, 1e-10);
    EXPECT_GT(e.regular_residual, 1e-3);
    EXPECT_EQ(to_json(e)["samples"], 64);
}

TEST(SingularFit, RankDeficientThrows) {
    std::vector<CornerSample> few(2, CornerSample{0.1, 0.3, Vec2(1.0, 0.0), 0.0});
    EXPECT_THROW(fit_singular_expansion(few, 0.2), NumericalError);
    std::vector<CornerSample> ray;
    for (int i = 0; i < 40; ++i) ray.push_back({0.01 * (i + 1), 0.4, Vec2(0.0, 0.0), 0.0});
    EXPECT_THROW(fit_singular_expansion(ray, 0.2), NumericalError);
    EXPECT_THROW(fit_singular_expansion(ray, -1.0), InvalidArgument);
}

TEST(SingularFit, InterpolatedFieldOnMesh) {
    const auto spaces = assemble(build_channel_mesh({3.0, 1.0, 24, 8, 1.0}));
    const auto& mesh = *spaces->mesh;
    ASSERT_FALSE(mesh.corner_points().empty());
    const Index corner = mesh.corner_points().front();
    const auto [en, ed] = mesh.corner_directions(corner);
    const Vec2 origin = mesh.vertex(corner);
    const auto to_local = [&](const Vec2& p) { return Vec2((p - origin).dot(en), (p - origin).dot(ed)); };
    const auto u = interpolate_velocity(*spaces, [&](const Vec2& p) {
        const Vec2 l = to_local(p);
        const Vec2 v(1.5 * l.x() + 0.4 * l.y() * l.y(), -1.5 * l.y() + 0.2 * l.x() * l.y());
        return Vec2(v.x() * en + v.y() * ed);
    });
    const auto q = interpolate_pressure(*spaces, [&](const Vec2& p) { return -2.0 + 0.3 * to_local(p).x(); });
    const PointLocator loc(spaces);
    const auto e = fit_singular_expansion(sample_corner(loc, u, q, corner, 0.3), 0.3, 2);
    // Linear part (1.5 x, -1.5 y) with pressure -2 is 2 f1 + 0.5 f3.
    EXPECT_NEAR(e.c[0], 2.0, 1e-8);
    EXPECT_NEAR(e.c[1], 0.0, 1e-8);
    EXPECT_NEAR(e.c[2], 0.5, 1e-8);
    EXPECT_NEAR(e.c[3], 0.0, 1e-8);
}
