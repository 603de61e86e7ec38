#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include "mixedns/evolution.hpp"
#include "mixedns/fem_assembly.hpp"
#include "mixedns/quadrature.hpp"

namespace mixedns {

/// Sparse maps from velocity coefficients to point values and gradients at
/// every quadrature point of the degree-5 rule.
struct FieldSampler {
    VectorXd weights;  ///< area-scaled quadrature weights
    std::array<SparseMatrix, 2> value;                   ///< component c
    std::array<std::array<SparseMatrix, 2>, 2> gradient;  ///< d(component i)/dx_j

    explicit FieldSampler(const DiscreteSpaces& s) {
        const auto& rule = triangle_rule_degree5();
        const Index P = static_cast<Index>(s.elements.size() * rule.size());
        weights.resize(P);
        std::array<std::vector<Eigen::Triplet<double>>, 2> vt;
        std::array<std::array<std::vector<Eigen::Triplet<double>>, 2>, 2> gt;
        Index row = 0;
        for (std::size_t t = 0; t < s.elements.size(); ++t) {
            const auto& g = s.elements[t];
            const auto& en = s.element_nodes[t];
            for (std::size_t q = 0; q < rule.size(); ++q, ++row) {
                weights[row] = rule.weights[q] * g.area;
                const auto N = p2::values(rule.points[q]);
                const auto dN = p2::gradients(rule.points[q], g);
                for (std::size_t a = 0; a < 6; ++a)
                    for (int c = 0; c < 2; ++c) {
                        const Index dof = 2 * en[a] + c;
                        vt[static_cast<std::size_t>(c)].emplace_back(row, dof, N[a]);
                        for (int j = 0; j < 2; ++j)
                            gt[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)].emplace_back(row, dof, dN[a][j]);
                    }
            }
        }
        for (std::size_t c = 0; c < 2; ++c) {
            value[c].resize(P, s.ndof_v);
            value[c].setFromTriplets(vt[c].begin(), vt[c].end());
            for (std::size_t j = 0; j < 2; ++j) {
                gradient[c][j].resize(P, s.ndof_v);
                gradient[c][j].setFromTriplets(gt[c][j].begin(), gt[c][j].end());
            }
        }
    }

    Index num_points() const { return weights.size(); }

    /// Pointwise (theta . grad) psi, component i, for dof-vector inputs.
    std::array<VectorXd, 2> advection(const VectorXd& theta, const VectorXd& psi) const {
        const VectorXd t0 = value[0] * theta, t1 = value[1] * theta;
        std::array<VectorXd, 2> out;
        for (std::size_t i = 0; i < 2; ++i)
            out[i] = t0.cwiseProduct(gradient[i][0] * psi) + t1.cwiseProduct(gradient[i][1] * psi);
        return out;
    }
};

/// b(theta, psi, phi) = int theta_j d(psi_i)/dx_j phi_i, exact for P2 fields.
inline double trilinear_b(const FieldSampler& fs, const VectorXd& theta, const VectorXd& psi, const VectorXd& phi) {
    const Index n = fs.value[0].cols();
    require(theta.size() == n && psi.size() == n && phi.size() == n, "trilinear_b: dimension mismatch");
    const auto adv = fs.advection(theta, psi);
    return fs.weights.dot(adv[0].cwiseProduct(fs.value[0] * phi) + adv[1].cwiseProduct(fs.value[1] * phi));
}

inline double trilinear_b(const DiscreteSpaces& s, const VectorXd& theta, const VectorXd& psi, const VectorXd& phi) {
    return trilinear_b(FieldSampler(s), theta, psi, phi);
}

/// Load vector v -> b(theta, psi, v) over all velocity dofs.
inline VectorXd convection_load(const FieldSampler& fs, const VectorXd& theta, const VectorXd& psi) {
    const auto adv = fs.advection(theta, psi);
    return SparseMatrix(fs.value[0].transpose()) * fs.weights.cwiseProduct(adv[0]) +
           SparseMatrix(fs.value[1].transpose()) * fs.weights.cwiseProduct(adv[1]);
}

/// T_k(a, b) = b(phi_a, phi_b, phi_k) for the basis modes.
class ConvectionTensor {
 public:
    explicit ConvectionTensor(const EigenBasis& basis) {
        const FieldSampler fs(*basis.spaces);
        const Index n = basis.n_modes();
        const MatrixXd& Phi = basis.modes;
        std::array<MatrixXd, 2> U;
        std::array<std::array<MatrixXd, 2>, 2> G;
        for (std::size_t c = 0; c < 2; ++c) {
            U[c] = fs.value[c] * Phi;
            for (std::size_t j = 0; j < 2; ++j) G[c][j] = fs.gradient[c][j] * Phi;
        }
        // Weighted test values stacked over both components.
        const Index P = fs.num_points();
        MatrixXd test(2 * P, n);
        test.topRows(P) = fs.weights.asDiagonal() * U[0];
        test.bottomRows(P) = fs.weights.asDiagonal() * U[1];
        T_.assign(static_cast<std::size_t>(n), MatrixXd::Zero(n, n));
        MatrixXd Z(2 * P, n);
        for (Index a = 0; a < n; ++a) {
            for (std::size_t i = 0; i < 2; ++i)
                Z.middleRows(static_cast<Index>(i) * P, P) =
                    U[0].col(a).asDiagonal() * G[i][0] + U[1].col(a).asDiagonal() * G[i][1];
            const MatrixXd Ta = Z.transpose() * test;  // (b, k)
            for (Index k = 0; k < n; ++k) T_[static_cast<std::size_t>(k)].row(a) = Ta.col(k).transpose();
        }
    }

    Index n_modes() const { return static_cast<Index>(T_.size()); }
    double operator()(Index a, Index b, Index k) const { return T_[static_cast<std::size_t>(k)](a, b); }
    const MatrixXd& slice(Index k) const { return T_[static_cast<std::size_t>(k)]; }

    /// Columns of amplitudes U, W -> columns of (b(u, w, phi_k))_k.
    MatrixXd apply(const MatrixXd& U, const MatrixXd& W) const {
        MatrixXd out(n_modes(), U.cols());
        for (Index k = 0; k < n_modes(); ++k) out.row(k) = U.cwiseProduct(slice(k) * W).colwise().sum();
        return out;
    }

    /// d/dw [b(u, w, .) + b(w, u, .)] at amplitudes u.
    MatrixXd linearization(const VectorXd& u) const {
        MatrixXd L(n_modes(), n_modes());
        for (Index k = 0; k < n_modes(); ++k) L.row(k) = ((slice(k) + slice(k).transpose()).transpose() * u).transpose();
        return L;
    }

 private:
    std::vector<MatrixXd> T_;
};

/// Spectral context plus the reduced convection tensor.
struct NavierStokesModel {
    ContextPtr ctx;
    std::shared_ptr<const ConvectionTensor> tensor;

    static NavierStokesModel build(std::shared_ptr<const EigenBasis> basis, const TimeGrid& grid) {
        return {EvolutionContext::from_basis(basis, grid), std::make_shared<const ConvectionTensor>(*basis)};
    }
};

/// (b(u(t), w(t), phi_k))_k at the Gauss times.
inline DataPair convection_data(const NavierStokesModel& m, const SpectralField& u, const SpectralField& w) {
    DataPair d = DataPair::zero(m.ctx);
    d.mu = m.tensor->apply(u.gauss_values(), w.gauss_values());
    return d;
}

/// Same functional through the physical fields: reconstruct, assemble the
/// convection load and project on the modes.
inline DataPair convection_data_physical(const NavierStokesModel& m, const FieldSampler& fs, const SpectralField& u,
                                         const SpectralField& w) {
    const EigenBasis& b = *m.ctx->basis();
    DataPair d = DataPair::zero(m.ctx);
    for (Index c = 0; c < d.mu.cols(); ++c) {
        const VectorXd uc = b.reconstruct(u.gauss_values().col(c));
        const VectorXd wc = b.reconstruct(w.gauss_values().col(c));
        d.mu.col(c) = b.modes.transpose() * convection_load(fs, uc, wc);
    }
    return d;
}

/// [u' + A u + b(u, u, .); u(0)]
inline DataPair apply_N(const NavierStokesModel& m, const SpectralField& u) {
    return apply_S(u) + convection_data(m, u, u);
}

/// [b(u, w, .) + b(w, u, .); 0]
inline DataPair apply_B_u(const NavierStokesModel& m, const SpectralField& u, const SpectralField& w) {
    return convection_data(m, u, w) + convection_data(m, w, u);
}

/// S(w) + B_u(w)
inline DataPair apply_G_u(const NavierStokesModel& m, const SpectralField& u, const SpectralField& w) {
    return apply_S(w) + apply_B_u(m, u, w);
}

/// Solves G_u(w) = rhs interval by interval: on interval j the Gauss-node
/// forcing g_j of w satisfies g_j + L_u(t_q) theta_w(t_q) = rhs(t_q), with
/// theta_w given by the exact propagator from theta_w(t_j).
inline SpectralField solve_linearized(const NavierStokesModel& m, const SpectralField& u, const DataPair& rhs) {
    const auto& ctx = *m.ctx;
    const TimeGrid& g = ctx.grid();
    const Index n = ctx.n_modes(), N = g.intervals, Q = g.gauss_points();
    require(rhs.mu.rows() == n && rhs.mu.cols() == g.num_gauss() && rhs.a.size() == n, "solve_linearized: rhs dimension mismatch");
    MatrixXd G(n, g.num_gauss());
    VectorXd theta = rhs.a;
    MatrixXd A(n * Q, n * Q);
    VectorXd b(n * Q);
    for (Index j = 0; j < N; ++j) {
        A.setIdentity();
        for (Index q = 0; q < Q; ++q) {
            const MatrixXd L = m.tensor->linearization(u.gauss_values().col(j * Q + q));
            VectorXd known(n);
            for (Index k = 0; k < n; ++k) known[k] = ctx.propagator(k).gauss_decay[q] * theta[k];
            b.segment(q * n, n) = rhs.mu.col(j * Q + q) - L * known;
            for (Index qq = 0; qq < Q; ++qq) {
                VectorXd wq(n);
                for (Index k = 0; k < n; ++k) wq[k] = ctx.propagator(k).gauss_weights(q, qq);
                A.block(q * n, qq * n, n, n) += L * wq.asDiagonal();
            }
        }
        Eigen::PartialPivLU<MatrixXd> lu(A);
        const double rc = lu.rcond();
        if (!(rc > 1e-13)) throw NumericalError("solve_linearized: near-singular step matrix on interval " + std::to_string(j));
        const VectorXd x = lu.solve(b);
        for (Index q = 0; q < Q; ++q) G.col(j * Q + q) = x.segment(q * n, n);
        VectorXd next(n);
        for (Index k = 0; k < n; ++k) {
            const auto& P = ctx.propagator(k);
            double v = P.decay * theta[k];
            for (Index q = 0; q < Q; ++q) v += P.end_weights[q] * x[q * n + k];
            next[k] = v;
        }
        theta = next;
    }
    return SpectralField(m.ctx, rhs.a, G);
}

struct NewtonOptions {
    int max_iters = 20;
    double abs_tol = 1e-11;  ///< on |N(u) - d|_Y
    double damping = 1.0;    ///< initial step fraction
    double linear_tol = 1e-10;
    /// Called with every accepted iterate, starting with the initial guess.
    std::function<void(const SpectralField&)> observer;

    void validate() const {
        require(max_iters >= 1, "NewtonOptions: max_iters must be >= 1");
        require(abs_tol > 0.0 && linear_tol > 0.0, "NewtonOptions: tolerances must be positive");
        require(damping > 0.0 && damping <= 1.0, "NewtonOptions: damping must lie in (0, 1]");
    }
};

struct ContinuationReport {
    double base_residual = 0.0;      ///< residual of the initial guess
    double final_residual = 0.0;
    double perturbation_norm = 0.0;  ///< |d~ - d|_Y (perturbation runs)
    double solution_shift = 0.0;     ///< |u~ - u|_X (perturbation runs)
    int newton_iterations = 0;
    bool converged = false;
    std::vector<double> residuals;         ///< per iterate
    std::vector<double> step_lengths;
    std::vector<double> quadratic_ratios;  ///< r_{n+1} / r_n^2
    double max_linear_residual = 0.0;
    std::string failure;  ///< why the iteration stopped early, empty otherwise
};

struct NewtonResult {
    SpectralField solution;
    ContinuationReport report;
};

/// Newton iteration for N(u) = d with backtracking on |N(u) - d|_Y; starts
/// from the Stokes solution of d unless a guess is given. A breakdown of the
/// linear solve ends the iteration with report.failure set.
inline NewtonResult solve_navier_stokes(const NavierStokesModel& m, const DataPair& d, const NewtonOptions& opt = {},
                                        const std::optional<SpectralField>& guess = std::nullopt) {
    opt.validate();
    SpectralField u = guess ? *guess : solve_stokes_evolution(d);
    ContinuationReport rep;
    DataPair r = d - apply_N(m, u);
    double res = r.norm_Y();
    rep.base_residual = res;
    rep.residuals.push_back(res);
    if (opt.observer) opt.observer(u);
    SpectralField best = u;
    double best_res = res;
    for (int it = 0; it < opt.max_iters && res > opt.abs_tol; ++it) {
        if (!std::isfinite(res)) {
            rep.failure = "residual is not finite";
            break;
        }
        SpectralField delta = SpectralField::zero(m.ctx);
        try {
            delta = solve_linearized(m, u, r);
        } catch (const NumericalError& e) {
            rep.failure = e.what();
            break;
        }
        const double lin_res = (apply_G_u(m, u, delta) - r).norm_Y();
        rep.max_linear_residual = std::max(rep.max_linear_residual, lin_res);
        if (!(lin_res <= opt.linear_tol * std::max(1.0, r.norm_Y()))) {
            rep.failure = "linearized solve missed its tolerance (" + std::to_string(lin_res) + ")";
            break;
        }
        double alpha = opt.damping;
        SpectralField trial = u + delta * alpha;
        DataPair rt = d - apply_N(m, trial);
        double rt_norm = rt.norm_Y();
        while (rt_norm > (1.0 - 1e-4 * alpha) * res && alpha > 1.0 / 64) {
            alpha *= 0.5;
            trial = u + delta * alpha;
            rt = d - apply_N(m, trial);
            rt_norm = rt.norm_Y();
        }
        if (res > 0.0) rep.quadratic_ratios.push_back(rt_norm / (res * res));
        u = trial;
        r = rt;
        res = rt_norm;
        rep.residuals.push_back(res);
        rep.step_lengths.push_back(alpha);
        rep.newton_iterations = it + 1;
        if (opt.observer) opt.observer(u);
        if (res < best_res) {
            best = u;
            best_res = res;
        }
    }
    rep.converged = best_res <= opt.abs_tol;
    rep.final_residual = best_res;
    return {best, rep};
}

/// Random direction in Y with mode-wise decay 1 / lambda_k, unit Y-norm.
inline DataPair random_perturbation(ContextPtr ctx, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    DataPair p = DataPair::zero(ctx);
    const auto& lam = ctx->lambdas();
    for (Index c = 0; c < p.mu.cols(); ++c)
        for (Index k = 0; k < p.mu.rows(); ++k) p.mu(k, c) = nd(rng) / lam[k];
    for (Index k = 0; k < p.a.size(); ++k) p.a[k] = nd(rng) / lam[k];
    return p * (1.0 / p.norm_Y());
}

struct PerturbationTrial {
    double scale = 0.0;
    int trial = 0;
    double shift_ratio = 0.0;       ///< |u~ - u|_X / scale
    double linear_prediction = 0.0;  ///< |G_u^{-1} p|_X
    ContinuationReport report;
};

struct PerturbationSummary {
    double scale = 0.0;
    int trials = 0;
    double mean_shift_ratio = 0.0;
    int max_iterations = 0;
    int failures = 0;
};

struct PerturbationExperiment {
    SpectralField base;
    ContinuationReport base_report;
    std::vector<PerturbationTrial> trials;
    std::vector<PerturbationSummary> summary;
};

/// Re-solves with data + eps p from the base solution for every scale and
/// trial; the direction p is fixed per trial across scales.
inline PerturbationExperiment perturbation_experiment(const NavierStokesModel& m, const DataPair& base_data,
                                                      const std::vector<double>& scales, int trials, std::uint64_t seed,
                                                      const NewtonOptions& opt = {}) {
    require(trials >= 1, "perturbation_experiment: trials must be >= 1");
    auto base = solve_navier_stokes(m, base_data, opt);
    if (!base.report.converged) throw NumericalError("perturbation_experiment: base problem did not converge");
    PerturbationExperiment out{base.solution, base.report, {}, {}};
    std::mt19937_64 rng(seed);
    std::vector<DataPair> directions;
    for (int t = 0; t < trials; ++t) directions.push_back(random_perturbation(m.ctx, rng));
    for (double eps : scales) {
        PerturbationSummary sum{eps, trials, 0.0, 0, 0};
        int ok = 0;
        for (int t = 0; t < trials; ++t) {
            const DataPair& p = directions[static_cast<std::size_t>(t)];
            PerturbationTrial tr;
            tr.scale = eps;
            tr.trial = t;
            tr.linear_prediction = solve_linearized(m, out.base, p).norm_X();
            try {
                auto res = solve_navier_stokes(m, base_data + p * eps, opt, out.base);
                tr.report = res.report;
                tr.report.perturbation_norm = (p * eps).norm_Y();
                tr.report.solution_shift = (res.solution - out.base).norm_X();
                tr.shift_ratio = eps > 0.0 ? tr.report.solution_shift / eps : 0.0;
            } catch (const NumericalError&) {
                tr.report.converged = false;
            }
            if (tr.report.converged) {
                ++ok;
                sum.mean_shift_ratio += tr.shift_ratio;
            } else {
                ++sum.failures;
            }
            sum.max_iterations = std::max(sum.max_iterations, tr.report.newton_iterations);
            out.trials.push_back(tr);
        }
        if (ok > 0) sum.mean_shift_ratio /= ok;
        out.summary.push_back(sum);
    }
    return out;
}

inline nlohmann::json to_json(const PerturbationSummary& s) {
    return {{"scale", s.scale}, {"trials", s.trials}, {"mean_shift_ratio", s.mean_shift_ratio},
            {"max_iterations", s.max_iterations}, {"failures", s.failures}};
}

inline nlohmann::json to_json(const ContinuationReport& r) {
    return {{"base_residual", r.base_residual}, {"final_residual", r.final_residual},
            {"perturbation_norm", r.perturbation_norm}, {"solution_shift", r.solution_shift},
            {"newton_iterations", r.newton_iterations}, {"converged", r.converged},
            {"residuals", r.residuals}, {"step_lengths", r.step_lengths},
            {"quadratic_ratios", r.quadratic_ratios}, {"max_linear_residual", r.max_linear_residual},
            {"failure", r.failure}};
}

/// Largest observed |b(u, w, .)|_Y / (|u|_X |w|_X) over random fields built
/// from decaying random data.
inline double measure_convection_constant(const NavierStokesModel& m, int trials, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double best = 0.0;
    for (int t = 0; t < trials; ++t) {
        const auto u = solve_stokes_evolution(random_perturbation(m.ctx, rng));
        const auto w = solve_stokes_evolution(random_perturbation(m.ctx, rng));
        best = std::max(best, convection_data(m, u, w).norm_Y() / (u.norm_X() * w.norm_X()));
    }
    return best;
}

/// Rescales d so that its Stokes solution has the given X-norm.
inline DataPair scale_to_stokes_norm(const DataPair& d, double target) {
    const double x = solve_stokes_evolution(d).norm_X();
    require(x > 0.0, "scale_to_stokes_norm: data has a zero Stokes solution");
    return d * (target / x);
}

struct ManufacturedRun {
    SpectralField exact;
    NewtonResult result;
    std::vector<double> errors;        ///< |u_n - exact|_X per iterate
    std::vector<double> error_ratios;  ///< e_{n+1} / e_n^2 while e_{n+1} > 1e-13
    double final_error = 0.0;
};

/// Newton on d = N(exact) for a random Stokes trajectory scaled to the given
/// X-norm, started from the Stokes solution of d.
inline ManufacturedRun manufactured_newton(const NavierStokesModel& m, double x_norm, std::uint64_t seed, NewtonOptions opt = {}) {
    require(x_norm > 0.0, "manufactured_newton: target norm must be positive");
    std::mt19937_64 rng(seed);
    auto u = solve_stokes_evolution(random_perturbation(m.ctx, rng));
    ManufacturedRun run{u * (x_norm / u.norm_X()), {SpectralField::zero(m.ctx), {}}, {}, {}, 0.0};
    const DataPair d = apply_N(m, run.exact);
    auto user = opt.observer;
    opt.observer = [&](const SpectralField& it) {
        run.errors.push_back((it - run.exact).norm_X());
        if (user) user(it);
    };
    run.result = solve_navier_stokes(m, d, opt);
    run.final_error = (run.result.solution - run.exact).norm_X();
    for (std::size_t i = 0; i + 1 < run.errors.size(); ++i)
        if (run.errors[i + 1] > 1e-13) run.error_ratios.push_back(run.errors[i + 1] / (run.errors[i] * run.errors[i]));
    return run;
}

inline void write_residual_history_csv(std::ostream& os, const ContinuationReport& r) {
    os.precision(17);
    os << "iteration,residual,step_length,quadratic_ratio\n";
    for (std::size_t i = 0; i < r.residuals.size(); ++i) {
        os << i << ',' << r.residuals[i] << ',';
        if (i > 0) os << r.step_lengths[i - 1] << ',' << r.quadratic_ratios[i - 1];
        else os << ',';
        os << '\n';
    }
}

}  // namespace mixedns
