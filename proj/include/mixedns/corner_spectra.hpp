#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mixedns/common.hpp"
#include "mixedns/fem_assembly.hpp"

namespace mixedns {

using Complex = std::complex<double>;
using Matrix4c = Eigen::Matrix<Complex, 4, 4>;

inline constexpr Complex I_unit{0.0, 1.0};

/// Angular profile (w1, w2, Q) of a pencil solution.
struct AngularProfile {
    Complex w1, w2, q;
};

/// Four-column fundamental system of the homogeneous angular system at the
/// pencil parameter lambda, evaluated at angle omega (complex omega allowed).
/// Uses the separate lambda = 0 system exactly at lambda = 0.
inline std::array<AngularProfile, 4> fundamental_columns(Complex lambda, Complex omega) {
    if (lambda == Complex(0.0)) {
        return {AngularProfile{std::cos(2.0 * omega), std::sin(2.0 * omega) - 2.0 * omega, 4.0 * std::cos(omega)},
                AngularProfile{-std::sin(2.0 * omega) - 2.0 * omega, std::cos(2.0 * omega), -4.0 * std::sin(omega)},
                AngularProfile{1.0, 0.0, 0.0}, AngularProfile{0.0, 1.0, 0.0}};
    }
    const Complex z = I_unit * lambda;
    const Complex a = z * omega, b = (z - 2.0) * omega, c = (z - 1.0) * omega;
    return {AngularProfile{std::cos(a), -std::sin(a), 0.0},
            AngularProfile{std::sin(a), std::cos(a), 0.0},
            AngularProfile{-z / 2.0 * std::cos(b), std::sin(a) + z / 2.0 * std::sin(b), -2.0 * z * std::cos(c)},
            AngularProfile{z / 2.0 * std::sin(b), std::cos(a) + z / 2.0 * std::cos(b), 2.0 * z * std::sin(c)}};
}

inline AngularProfile general_solution(Complex lambda, const std::array<Complex, 4>& C, Complex omega) {
    const auto cols = fundamental_columns(lambda, omega);
    AngularProfile out{0.0, 0.0, 0.0};
    for (std::size_t j = 0; j < 4; ++j) {
        out.w1 += C[j] * cols[j].w1;
        out.w2 += C[j] * cols[j].w2;
        out.q += C[j] * cols[j].q;
    }
    return out;
}

/// n-th derivative of an analytic function by the trapezoidal rule on a
/// circle of the given radius (exponentially accurate).
inline Complex cauchy_derivative(const std::function<Complex(Complex)>& f, Complex at, int order, double radius = 0.1,
                                 int points = 64) {
    Complex acc = 0.0;
    for (int k = 0; k < points; ++k) {
        const Complex e = std::polar(1.0, 2.0 * pi * k / points);
        acc += f(at + radius * e) * std::pow(e, -order);
    }
    double fact = 1.0;
    for (int i = 2; i <= order; ++i) fact *= i;
    return acc * fact / (static_cast<double>(points) * std::pow(radius, order));
}

/// Characteristic matrix with the entries in closed form (boundary rows at
/// the Neumann side first, then the Dirichlet side).
inline Matrix4c pencil_matrix(Complex lambda) {
    if (lambda == Complex(0.0)) throw InvalidArgument("pencil_matrix: lambda = 0 uses the separate nondegeneracy check");
    const Complex z = I_unit * lambda;
    const double h = pi / 2.0;
    const Complex ca = std::cos(z * h), sa = std::sin(z * h);
    const Complex cb = std::cos((z - 2.0) * h), sb = std::sin((z - 2.0) * h);
    Matrix4c D;
    D << 0.0, 4.0 - z, 0.0, -2.0 + z,
         2.0 + z, 0.0, 4.0 + z, 0.0,
         ca - z / 2.0 * cb, sa - z / 2.0 * sb, -z / 2.0 * cb, z / 2.0 * sb,
         z / 2.0 * sb, -z / 2.0 * cb, sa + z / 2.0 * sb, ca + z / 2.0 * cb;
    return D;
}

/// Boundary operators applied to the fundamental columns: dw1/domega and
/// dw2/domega - Q at omega = 0, w1 and w2 at omega = pi/2. Derivatives are
/// taken numerically through complex omega.
inline Matrix4c boundary_operator_matrix(Complex lambda) {
    Matrix4c M;
    for (int j = 0; j < 4; ++j) {
        const auto col = [lambda, j](Complex w) { return fundamental_columns(lambda, w)[static_cast<std::size_t>(j)]; };
        M(0, j) = cauchy_derivative([&](Complex w) { return col(w).w1; }, 0.0, 1);
        M(1, j) = cauchy_derivative([&](Complex w) { return col(w).w2; }, 0.0, 1) - col(0.0).q;
        M(2, j) = col(pi / 2.0).w1;
        M(3, j) = col(pi / 2.0).w2;
    }
    return M;
}

/// Maps the boundary-operator matrix onto the closed-form one: rows scaled by
/// (2/z, 2/z, 1, 1), columns recombined as (c1 + c3, c2 - c4, c3, c4).
inline Matrix4c normalise_boundary_matrix(const Matrix4c& M, Complex lambda) {
    const Complex z = I_unit * lambda;
    Matrix4c S = Matrix4c::Identity();
    S(0, 0) = S(1, 1) = 2.0 / z;
    Matrix4c T = Matrix4c::Identity();
    T(2, 0) = 1.0;
    T(3, 1) = -1.0;
    return S * M * T;
}

inline Complex pencil_determinant(Complex lambda) { return pencil_matrix(lambda).determinant(); }

/// (i lambda)^2 - 4 cos^2(i lambda pi/2) - sin^2(i lambda pi/2), evaluated in
/// the double-angle form z^2 - 5/2 - (3/2) cos(pi z).
inline Complex reduced_characteristic(Complex lambda) {
    const Complex z = I_unit * lambda;
    return z * z - 2.5 - 1.5 * std::cos(pi * z);
}

/// Same quantity written literally with squared trigonometric terms.
inline Complex reduced_characteristic_literal(Complex lambda) {
    const Complex z = I_unit * lambda;
    const Complex c = std::cos(z * pi / 2.0), s = std::sin(z * pi / 2.0);
    return z * z - 4.0 * c * c - s * s;
}

inline Complex reduced_characteristic_derivative(Complex lambda) {
    const Complex z = I_unit * lambda;
    return I_unit * (2.0 * z + 1.5 * pi * std::sin(pi * z));
}

/// Real and imaginary parts of the characteristic at lambda = a + ib,
/// separated by hand.
inline std::pair<double, double> real_imag_system(double a, double b) {
    const double ep = std::exp(pi * a), em = std::exp(-pi * a);
    return {(b * b - a * a) - 2.5 - 0.75 * std::cos(pi * b) * (ep + em), -2.0 * a * b - 0.75 * std::sin(pi * b) * (ep - em)};
}

struct PencilSample {
    Complex lambda;
    Complex det_full;
    Complex det_reduced;
};

inline PencilSample sample_pencil(Complex lambda) { return {lambda, pencil_determinant(lambda), reduced_characteristic(lambda)}; }

struct Rect {
    double re_lo = -20.0, re_hi = 20.0, im_lo = -1.05, im_hi = -0.005;

    bool contains(Complex z) const { return z.real() > re_lo && z.real() < re_hi && z.imag() > im_lo && z.imag() < im_hi; }
};

struct WindingResult {
    int count = 0;
    double raw = 0.0;        ///< unrounded argument-principle value
    double min_modulus = 0.0;  ///< smallest |f| seen on the contour
};

namespace detail {

// Adaptive 7/15-point Gauss-Kronrod on a segment of the complex plane.
inline Complex gk15_segment(const std::function<Complex(Complex)>& f, Complex a, Complex b, double tol, int depth,
                            double& min_mod, const std::function<double(Complex)>& modulus, long& budget) {
    if (--budget < 0) throw NumericalError("count_roots: adaptive quadrature budget exhausted (root near the contour?)");
    static const double xk[8] = {0.991455371120812639, 0.949107912342758525, 0.864864423359769073, 0.741531185599394440,
                                 0.586087235467691130, 0.405845151377397167, 0.207784955007898468, 0.0};
    static const double wk[8] = {0.022935322010529225, 0.063092092629978553, 0.104790010322250184, 0.140653259715525919,
                                 0.169004726639267903, 0.190350578064785410, 0.204432940075298892, 0.209482141084727828};
    static const double wg[4] = {0.129484966168869693, 0.279705391489276668, 0.381830050505118945, 0.417959183673469388};
    const Complex mid = 0.5 * (a + b), half = 0.5 * (b - a);
    Complex k = wk[7] * f(mid), g = wg[3] * f(mid);
    min_mod = std::min(min_mod, modulus(mid));
    for (int i = 0; i < 7; ++i) {
        const Complex fp = f(mid + xk[i] * half), fm = f(mid - xk[i] * half);
        min_mod = std::min({min_mod, modulus(mid + xk[i] * half), modulus(mid - xk[i] * half)});
        k += wk[i] * (fp + fm);
        if (i % 2 == 1) g += wg[i / 2] * (fp + fm);
    }
    k *= half;
    g *= half;
    if (std::abs(k - g) <= tol || depth > 40) return k;
    return gk15_segment(f, a, mid, 0.5 * tol, depth + 1, min_mod, modulus, budget) +
           gk15_segment(f, mid, b, 0.5 * tol, depth + 1, min_mod, modulus, budget);
}

}  // namespace detail

/// Argument-principle root count of the reduced characteristic inside the
/// rectangle; throws when a root lies too close to the contour or the
/// integral is not near an integer.
inline WindingResult count_roots(const Rect& r, double min_modulus = 1e-6, double defect_tol = 0.01) {
    require(r.re_lo < r.re_hi && r.im_lo < r.im_hi, "count_roots: empty rectangle");
    const std::array<Complex, 4> c{Complex(r.re_lo, r.im_lo), Complex(r.re_hi, r.im_lo), Complex(r.re_hi, r.im_hi),
                                   Complex(r.re_lo, r.im_hi)};
    auto logd = [](Complex l) { return reduced_characteristic_derivative(l) / reduced_characteristic(l); };
    // Scale-aware modulus: |f| relative to its dominant terms.
    auto modulus = [](Complex l) {
        const Complex z = I_unit * l;
        return std::abs(reduced_characteristic(l)) / (1.0 + std::abs(z * z) + 1.5 * std::abs(std::cos(pi * z)));
    };
    double min_mod = std::numeric_limits<double>::infinity();
    auto too_close = [&] {
        return NumericalError("count_roots: contour passes too close to a root (relative |f| = " + std::to_string(min_mod) +
                              "); shift the window edges slightly");
    };
    for (std::size_t s = 0; s < 4; ++s)
        for (int k = 0; k <= 2000; ++k) min_mod = std::min(min_mod, modulus(c[s] + (c[(s + 1) % 4] - c[s]) * (k / 2000.0)));
    if (min_mod < min_modulus) throw too_close();
    long budget = 200000;
    Complex total = 0.0;
    for (std::size_t s = 0; s < 4; ++s) {
        // Sides are split into pieces of length <= 0.25.
        const Complex a = c[s], b = c[(s + 1) % 4];
        const int pieces = std::max(1, static_cast<int>(std::ceil(std::abs(b - a) / 0.25)));
        for (int p = 0; p < pieces; ++p)
            total += detail::gk15_segment(logd, a + (b - a) * (static_cast<double>(p) / pieces),
                                          a + (b - a) * (static_cast<double>(p + 1) / pieces), 1e-10, 0, min_mod, modulus, budget);
    }
    if (min_mod < min_modulus) throw too_close();
    const Complex n = total / (2.0 * pi * I_unit);
    WindingResult out;
    out.raw = n.real();
    out.count = static_cast<int>(std::lround(n.real()));
    out.min_modulus = min_mod;
    if (std::abs(n.real() - out.count) > defect_tol || std::abs(n.imag()) > defect_tol)
        throw NumericalError("count_roots: winding number " + std::to_string(n.real()) + " is not near an integer");
    return out;
}

struct RootResult {
    Complex root;
    double residual = 0.0;
    double simplicity = 0.0;  ///< |dD/dlambda| at the root, a proxy for simplicity
    bool simple = false;
    int iterations = 0;
};

/// Complex Newton on the reduced characteristic.
inline RootResult find_root(Complex guess, int max_iters = 50, double tol = 1e-12) {
    Complex z = guess;
    for (int it = 1; it <= max_iters; ++it) {
        const Complex f = reduced_characteristic(z), df = reduced_characteristic_derivative(z);
        if (!std::isfinite(std::abs(f)) || std::abs(df) == 0.0) break;
        const Complex step = f / df;
        z -= step;
        const double res = std::abs(reduced_characteristic(z));
        if (res <= tol && std::abs(step) <= 1e-10 * std::max(1.0, std::abs(z))) {
            RootResult r;
            r.root = z;
            r.residual = res;
            r.simplicity = std::abs(reduced_characteristic_derivative(z));
            r.simple = r.simplicity > 1e-6;
            r.iterations = it;
            return r;
        }
    }
    throw NumericalError("find_root: Newton did not converge from guess (" + std::to_string(guess.real()) + ", " +
                         std::to_string(guess.imag()) + ")");
}

struct RootReport {
    Rect strip;
    int winding_count = 0;
    double winding_raw = 0.0;
    std::vector<RootResult> roots;
};

/// Root count plus Newton localisation from a grid of seeds inside the rectangle.
inline RootReport analyze_strip(const Rect& r, int seeds_re = 81, int seeds_im = 5) {
    RootReport rep;
    rep.strip = r;
    const auto w = count_roots(r);
    rep.winding_count = w.count;
    rep.winding_raw = w.raw;
    for (int i = 0; i < seeds_re; ++i)
        for (int j = 0; j < seeds_im; ++j) {
            const Complex g(r.re_lo + (r.re_hi - r.re_lo) * (i + 0.5) / seeds_re, r.im_lo + (r.im_hi - r.im_lo) * (j + 0.5) / seeds_im);
            try {
                const auto root = find_root(g);
                if (!r.contains(root.root)) continue;
                const bool seen = std::any_of(rep.roots.begin(), rep.roots.end(),
                                              [&](const RootResult& o) { return std::abs(o.root - root.root) < 1e-8; });
                if (!seen) rep.roots.push_back(root);
            } catch (const NumericalError&) {
            }
        }
    std::sort(rep.roots.begin(), rep.roots.end(), [](const RootResult& a, const RootResult& b) { return a.root.imag() > b.root.imag(); });
    return rep;
}

inline nlohmann::json to_json(const RootReport& r) {
    nlohmann::json roots = nlohmann::json::array();
    for (const auto& x : r.roots)
        roots.push_back({{"re", x.root.real()}, {"im", x.root.imag()}, {"residual", x.residual},
                         {"derivative_modulus", x.simplicity}, {"simple", x.simple}});
    return {{"schema", "mixedns.roots/1"},
            {"strip", {{"re_lo", r.strip.re_lo}, {"re_hi", r.strip.re_hi}, {"im_lo", r.strip.im_lo}, {"im_hi", r.strip.im_hi}}},
            {"winding_count", r.winding_count}, {"winding_raw", r.winding_raw}, {"roots", roots},
            {"simplicity_note", "derivative modulus is a proxy for simplicity"}};
}

/// |D| and |reduced| on a grid, for heat-map plots.
inline void write_determinant_grid_csv(std::ostream& os, const Rect& r, int n_re, int n_im) {
    require(n_re >= 2 && n_im >= 2, "write_determinant_grid_csv: need at least 2 x 2 samples");
    os.precision(17);
    os << "re,im,abs_det_full,abs_det_reduced\n";
    for (int j = 0; j < n_im; ++j)
        for (int i = 0; i < n_re; ++i) {
            const Complex l(r.re_lo + (r.re_hi - r.re_lo) * i / (n_re - 1), r.im_lo + (r.im_hi - r.im_lo) * j / (n_im - 1));
            const double full = l == Complex(0.0) ? std::numeric_limits<double>::quiet_NaN() : std::abs(pencil_determinant(l));
            os << l.real() << ',' << l.imag() << ',' << full << ',' << std::abs(reduced_characteristic(l)) << '\n';
        }
}

/// Velocity (local corner frame) and pressure of one singular field.
struct CornerField {
    Vec2 velocity;
    double pressure = 0.0;
};

/// The four corner fields at polar position (r, omega), omega measured from
/// the do-nothing side towards the wall.
inline std::array<CornerField, 4> singular_basis(double r, double omega) {
    const double c = r * std::cos(omega), s = r * std::sin(omega);
    return {CornerField{Vec2(c, -s), 0.0}, CornerField{Vec2(s, c), 0.0}, CornerField{Vec2(-c, s), -4.0},
            CornerField{Vec2(-s, 3.0 * c), 0.0}};
}

struct CornerSample {
    double r = 0.0, omega = 0.0;
    Vec2 velocity;  ///< local frame
    double pressure = 0.0;
};

struct SingularExpansion {
    std::array<double, 4> c{};
    double fit_residual = 0.0;      ///< RMS least-squares residual
    double regular_residual = 0.0;  ///< RMS of the field minus the singular part
    double delta = 0.0;
    int samples = 0;
};

/// Least-squares fit of samples against the four corner fields plus a
/// regular part: homogeneous velocity polynomials of degree 2..degree and
/// pressure polynomials of degree 1..degree.
inline SingularExpansion fit_singular_expansion(const std::vector<CornerSample>& samples, double delta, int degree = 3) {
    require(delta > 0.0, "fit_singular_expansion: delta must be positive");
    require(degree >= 2, "fit_singular_expansion: regular degree must be >= 2");
    std::vector<std::pair<int, int>> vel_monos, p_monos;
    for (int d = 1; d <= degree; ++d)
        for (int i = 0; i <= d; ++i) {
            if (d >= 2) vel_monos.emplace_back(d - i, i);
            p_monos.emplace_back(d - i, i);
        }
    const Index ncols = 4 + 2 * static_cast<Index>(vel_monos.size()) + static_cast<Index>(p_monos.size());
    const Index nrows = 3 * static_cast<Index>(samples.size());
    if (nrows < ncols) throw NumericalError("fit_singular_expansion: too few samples for the fit (rank-deficient system)");
    MatrixXd A = MatrixXd::Zero(nrows, ncols);
    VectorXd rhs(nrows);
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto& sm = samples[k];
        const double x = sm.r * std::cos(sm.omega) / delta, y = sm.r * std::sin(sm.omega) / delta;
        const auto f = singular_basis(sm.r, sm.omega);
        const Index r0 = 3 * static_cast<Index>(k);
        for (Index j = 0; j < 4; ++j) {
            A(r0, j) = f[static_cast<std::size_t>(j)].velocity.x();
            A(r0 + 1, j) = f[static_cast<std::size_t>(j)].velocity.y();
            A(r0 + 2, j) = f[static_cast<std::size_t>(j)].pressure;
        }
        Index col = 4;
        for (const auto& [px, py] : vel_monos) {
            const double m = std::pow(x, px) * std::pow(y, py);
            A(r0, col++) = m;
            A(r0 + 1, col++) = m;
        }
        for (const auto& [px, py] : p_monos) A(r0 + 2, col++) = std::pow(x, px) * std::pow(y, py);
        rhs[r0] = sm.velocity.x();
        rhs[r0 + 1] = sm.velocity.y();
        rhs[r0 + 2] = sm.pressure;
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(A);
    qr.setThreshold(1e-12);
    if (qr.rank() < ncols) throw NumericalError("fit_singular_expansion: rank-deficient fit system (too few or degenerate samples)");
    const VectorXd sol = qr.solve(rhs);
    SingularExpansion out;
    out.delta = delta;
    out.samples = static_cast<int>(samples.size());
    for (std::size_t j = 0; j < 4; ++j) out.c[j] = sol[static_cast<Index>(j)];
    out.fit_residual = (A * sol - rhs).norm() / std::sqrt(static_cast<double>(nrows));
    out.regular_residual = (rhs - A.leftCols(4) * sol.head(4)).norm() / std::sqrt(static_cast<double>(nrows));
    return out;
}

inline nlohmann::json to_json(const SingularExpansion& e) {
    return {{"schema", "mixedns.singular_fit/1"}, {"c", e.c}, {"fit_residual", e.fit_residual},
            {"regular_residual", e.regular_residual}, {"delta", e.delta}, {"samples", e.samples}};
}

/// Samples a discrete velocity/pressure pair on an annular sector around a
/// corner vertex, in the corner's local frame.
inline std::vector<CornerSample> sample_corner(const PointLocator& loc, const VectorXd& u, const VectorXd& q, Index corner,
                                               double delta, int n_r = 8, int n_omega = 8) {
    const auto& mesh = *loc.spaces().mesh;
    const auto [e_n, e_d] = mesh.corner_directions(corner);
    const Vec2 origin = mesh.vertex(corner);
    std::vector<CornerSample> out;
    for (int i = 0; i < n_r; ++i)
        for (int j = 0; j < n_omega; ++j) {
            const double r = delta * (0.25 + 0.75 * (i + 0.5) / n_r);
            const double w = 0.5 * pi * (j + 0.5) / n_omega;
            const Vec2 p = origin + r * (std::cos(w) * e_n + std::sin(w) * e_d);
            const Vec2 v = loc.velocity(u, p);
            out.push_back({r, w, Vec2(v.dot(e_n), v.dot(e_d)), loc.pressure(q, p)});
        }
    return out;
}

}  // namespace mixedns
