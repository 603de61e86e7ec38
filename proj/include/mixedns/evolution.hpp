#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mixedns/quadrature.hpp"
#include "mixedns/stokes_basis.hpp"

namespace mixedns {

/// Uniform partition of [0, T] with a Gauss rule on every interval.
struct TimeGrid {
    double t_end = 1.0;
    Index intervals = 64;
    LineRule rule;
    std::vector<double> nodes;

    static TimeGrid uniform(double t_end = 1.0, Index intervals = 64, int gauss_points = 4) {
        require(t_end > 0.0 && std::isfinite(t_end), "TimeGrid: T must be positive");
        require(intervals >= 1, "TimeGrid: need at least one interval");
        require(gauss_points >= 1 && gauss_points <= 12, "TimeGrid: gauss_points must lie in [1, 12]");
        TimeGrid g;
        g.t_end = t_end;
        g.intervals = intervals;
        g.rule = gauss_legendre(gauss_points);
        g.nodes.resize(static_cast<std::size_t>(intervals + 1));
        for (Index j = 0; j <= intervals; ++j) g.nodes[static_cast<std::size_t>(j)] = t_end * static_cast<double>(j) / static_cast<double>(intervals);
        return g;
    }

    double step() const { return t_end / static_cast<double>(intervals); }
    Index gauss_points() const { return static_cast<Index>(rule.size()); }
    Index num_gauss() const { return intervals * gauss_points(); }
    double gauss_time(Index j, Index q) const { return nodes[static_cast<std::size_t>(j)] + step() * rule.nodes[static_cast<std::size_t>(q)]; }
    double gauss_weight(Index q) const { return step() * rule.weights[static_cast<std::size_t>(q)]; }

    /// Interval containing t (the last one for t = T) and the local coordinate in [0, 1].
    std::pair<Index, double> locate(double t) const {
        require(t >= -1e-14 * t_end && t <= t_end * (1 + 1e-14), "TimeGrid: time outside [0, T]");
        Index j = std::min<Index>(intervals - 1, static_cast<Index>(std::floor(t / step())));
        j = std::max<Index>(j, 0);
        return {j, std::clamp((t - nodes[static_cast<std::size_t>(j)]) / step(), 0.0, 1.0)};
    }

    bool operator==(const TimeGrid& o) const {
        return t_end == o.t_end && intervals == o.intervals && rule.nodes == o.rule.nodes;
    }
};

/// phi_0(z) = e^z, phi_k(z) = sum_m z^m / (m + k)!
inline std::vector<double> phi_functions(double z, int kmax) {
    std::vector<double> phi(static_cast<std::size_t>(kmax + 1));
    if (std::abs(z) < 2.0) {
        for (int k = 0; k <= kmax; ++k) {
            double fact = 1.0;
            for (int i = 2; i <= k; ++i) fact *= i;
            double term = 1.0 / fact, sum = term;
            for (int m = 1; m < 60; ++m) {
                term *= z / (m + k);
                sum += term;
                if (std::abs(term) < 1e-18 * std::abs(sum)) break;
            }
            phi[static_cast<std::size_t>(k)] = sum;
        }
    } else {
        phi[0] = std::exp(z);
        double inv_fact = 1.0;
        for (int k = 1; k <= kmax; ++k) {
            if (k > 1) inv_fact /= (k - 1);
            phi[static_cast<std::size_t>(k)] = (phi[static_cast<std::size_t>(k - 1)] - inv_fact) / z;
        }
    }
    return phi;
}

/// Exact propagation of theta' + lambda theta = p over one interval, where p
/// is the polynomial interpolant of the forcing at the Gauss nodes.
struct ModePropagator {
    double lambda = 0.0;
    double decay = 0.0;    ///< e^{-lambda h}
    Eigen::RowVectorXd end_weights;  ///< theta_{j+1} = decay theta_j + end_weights g_j
    VectorXd gauss_decay;  ///< e^{-lambda h s_q}
    MatrixXd gauss_weights;
    VectorXd sample_decay;  ///< same on the shared 16-point sample rule
    MatrixXd sample_weights;
    /// Norm rule: 16-point Gauss on sub-intervals short enough that the
    /// exponential factor varies by at most e^2 across each.
    std::vector<double> fine_nodes, fine_w;
    VectorXd fine_decay;
    MatrixXd fine_weights;
    MatrixXd fine_interp;  ///< forcing interpolant at the norm-rule nodes
    MatrixXd vinv;         ///< Gauss values -> monomial coefficients

    ModePropagator(double lam, const TimeGrid& grid, const LineRule& fine) : lambda(lam) {
        require(lam > 0.0 && std::isfinite(lam), "ModePropagator: lambda must be positive");
        const Index Q = grid.gauss_points();
        const double h = grid.step();
        MatrixXd V(Q, Q);
        for (Index q = 0; q < Q; ++q)
            for (Index n = 0; n < Q; ++n) V(q, n) = std::pow(grid.rule.nodes[static_cast<std::size_t>(q)], static_cast<double>(n));
        vinv = V.inverse();
        const MatrixXd& Vinv = vinv;
        std::vector<double> fact(static_cast<std::size_t>(Q + 1), 1.0);
        for (Index n = 1; n <= Q; ++n) fact[static_cast<std::size_t>(n)] = fact[static_cast<std::size_t>(n - 1)] * static_cast<double>(n);

        auto weights_at = [&](double s, Eigen::RowVectorXd& row) {
            const auto phi = phi_functions(-lam * h * s, static_cast<int>(Q));
            Eigen::RowVectorXd w(Q);
            for (Index n = 0; n < Q; ++n)
                w[n] = h * fact[static_cast<std::size_t>(n)] * std::pow(s, static_cast<double>(n + 1)) * phi[static_cast<std::size_t>(n + 1)];
            row = w * Vinv;
            return phi[0];
        };
        decay = weights_at(1.0, end_weights);
        gauss_decay.resize(Q);
        gauss_weights.resize(Q, Q);
        for (Index q = 0; q < Q; ++q) {
            Eigen::RowVectorXd row;
            gauss_decay[q] = weights_at(grid.rule.nodes[static_cast<std::size_t>(q)], row);
            gauss_weights.row(q) = row;
        }
        const Index S = static_cast<Index>(fine.size());
        sample_decay.resize(S);
        sample_weights.resize(S, Q);
        for (Index r = 0; r < S; ++r) {
            Eigen::RowVectorXd row;
            sample_decay[r] = weights_at(fine.nodes[static_cast<std::size_t>(r)], row);
            sample_weights.row(r) = row;
        }
        const int parts = std::max(1, static_cast<int>(std::ceil(lam * h / 2.0)));
        for (int m = 0; m < parts; ++m)
            for (std::size_t r = 0; r < fine.size(); ++r) {
                fine_nodes.push_back((m + fine.nodes[r]) / parts);
                fine_w.push_back(fine.weights[r] / parts);
            }
        const Index F = static_cast<Index>(fine_nodes.size());
        fine_decay.resize(F);
        fine_weights.resize(F, Q);
        fine_interp.resize(F, Q);
        for (Index r = 0; r < F; ++r) {
            const double s = fine_nodes[static_cast<std::size_t>(r)];
            Eigen::RowVectorXd row;
            fine_decay[r] = weights_at(s, row);
            fine_weights.row(r) = row;
            Eigen::RowVectorXd mono(Q);
            for (Index n = 0; n < Q; ++n) mono[n] = std::pow(s, static_cast<double>(n));
            fine_interp.row(r) = mono * Vinv;
        }
    }

    /// Value and derivative at local coordinate s of interval j.
    std::pair<double, double> evaluate(double theta_j, const VectorXd& g_j, double s, double h) const {
        const Index Q = g_j.size();
        const auto phi = phi_functions(-lambda * h * s, static_cast<int>(Q));
        double val = phi[0] * theta_j;
        const VectorXd c = vinv * g_j;
        double fact = 1.0, p = 0.0;
        for (Index n = 0; n < Q; ++n) {
            if (n > 0) fact *= static_cast<double>(n);
            val += h * fact * std::pow(s, static_cast<double>(n + 1)) * phi[static_cast<std::size_t>(n + 1)] * c[n];
            p += c[n] * std::pow(s, static_cast<double>(n));
        }
        return {val, p - lambda * val};
    }
};

/// Shared per-(lambdas, grid) propagators.
class EvolutionContext {
 public:
    EvolutionContext(VectorXd lambdas, TimeGrid grid, std::shared_ptr<const EigenBasis> basis = nullptr)
        : lambdas_(std::move(lambdas)), grid_(std::move(grid)), basis_(std::move(basis)), fine_(gauss_legendre(16)) {
        require(lambdas_.size() >= 1, "EvolutionContext: need at least one mode");
        for (Index k = 0; k < lambdas_.size(); ++k) props_.emplace_back(lambdas_[k], grid_, fine_);
    }

    static std::shared_ptr<const EvolutionContext> from_basis(std::shared_ptr<const EigenBasis> b, const TimeGrid& grid) {
        require(b != nullptr, "EvolutionContext: null basis");
        return std::make_shared<const EvolutionContext>(b->lambdas, grid, b);
    }

    const VectorXd& lambdas() const { return lambdas_; }
    Index n_modes() const { return lambdas_.size(); }
    const TimeGrid& grid() const { return grid_; }
    const LineRule& fine_rule() const { return fine_; }
    const ModePropagator& propagator(Index k) const { return props_[static_cast<std::size_t>(k)]; }
    const std::shared_ptr<const EigenBasis>& basis() const { return basis_; }

 private:
    VectorXd lambdas_;
    TimeGrid grid_;
    std::shared_ptr<const EigenBasis> basis_;
    LineRule fine_;
    std::vector<ModePropagator> props_;
};

using ContextPtr = std::shared_ptr<const EvolutionContext>;

/// Element of Y: forcing amplitudes mu_k at the Gauss times (n_modes x N*Q,
/// column j*Q + q) and initial amplitudes a_k.
struct DataPair {
    ContextPtr ctx;
    MatrixXd mu;
    VectorXd a;

    static DataPair zero(ContextPtr c) {
        return {c, MatrixXd::Zero(c->n_modes(), c->grid().num_gauss()), VectorXd::Zero(c->n_modes())};
    }

    double forcing_norm() const {
        const TimeGrid& g = ctx->grid();
        double s = 0.0;
        for (Index col = 0; col < mu.cols(); ++col) s += g.gauss_weight(col % g.gauss_points()) * mu.col(col).squaredNorm();
        return std::sqrt(s);
    }
    double initial_norm() const { return std::sqrt((ctx->lambdas().array() * a.array().square()).sum()); }
    /// ||g||_{L2(0,T;L2)} + ||a||_V
    double norm_Y() const { return forcing_norm() + initial_norm(); }

    DataPair operator+(const DataPair& o) const { check(o); return {ctx, mu + o.mu, a + o.a}; }
    DataPair operator-(const DataPair& o) const { check(o); return {ctx, mu - o.mu, a - o.a}; }
    DataPair operator*(double s) const { return {ctx, mu * s, a * s}; }

    void check(const DataPair& o) const {
        require(ctx == o.ctx || (ctx->grid() == o.ctx->grid() && ctx->lambdas() == o.ctx->lambdas()),
                "DataPair: incompatible spectral contexts");
    }
};

namespace detail {

inline void propagate(const ModePropagator& prop, const TimeGrid& grid, const Eigen::Ref<const VectorXd>& g, double a,
                      Eigen::Ref<VectorXd> nodes, Eigen::Ref<VectorXd> gauss) {
    const Index N = grid.intervals, Q = grid.gauss_points();
    nodes[0] = a;
    for (Index j = 0; j < N; ++j) {
        const auto gj = g.segment(j * Q, Q);
        gauss.segment(j * Q, Q) = prop.gauss_decay * nodes[j] + prop.gauss_weights * gj;
        nodes[j + 1] = prop.decay * nodes[j] + prop.end_weights.dot(gj);
    }
}

}  // namespace detail

/// Trajectory of one mode with its derivative.
struct ModeTrajectory {
    ModePropagator prop;
    TimeGrid grid;
    VectorXd nodes;   ///< theta at t_0..t_N
    VectorXd source;  ///< forcing at the Gauss times
    VectorXd gauss;   ///< theta at the Gauss times
    VectorXd gauss_derivative;

    double value(double t) const { return eval(t).first; }
    double derivative(double t) const { return eval(t).second; }

    std::pair<double, double> eval(double t) const {
        const auto [j, s] = grid.locate(t);
        const Index Q = grid.gauss_points();
        return prop.evaluate(nodes[j], source.segment(j * Q, Q), s, grid.step());
    }
};

/// Exact solution of theta' + lambda theta = mu, theta(0) = a, with mu replaced
/// by its per-interval Gauss interpolant.
inline ModeTrajectory solve_mode_ode(double lambda, const std::function<double(double)>& mu, double a, const TimeGrid& grid) {
    ModeTrajectory tr{ModePropagator(lambda, grid, gauss_legendre(16)), grid, {}, {}, {}, {}};
    const Index N = grid.intervals, Q = grid.gauss_points();
    tr.source.resize(N * Q);
    for (Index j = 0; j < N; ++j)
        for (Index q = 0; q < Q; ++q) tr.source[j * Q + q] = mu(grid.gauss_time(j, q));
    tr.nodes.resize(N + 1);
    tr.gauss.resize(N * Q);
    detail::propagate(tr.prop, grid, tr.source, a, tr.nodes, tr.gauss);
    tr.gauss_derivative = tr.source - lambda * tr.gauss;
    return tr;
}

/// Element of X: per-mode trajectories generated by data (a, G) through the
/// exact mode propagators.
class SpectralField {
 public:
    SpectralField(ContextPtr ctx, const VectorXd& a, const MatrixXd& source) : ctx_(std::move(ctx)), a_(a), source_(source) {
        require(a_.size() == ctx_->n_modes() && source_.rows() == ctx_->n_modes() && source_.cols() == ctx_->grid().num_gauss(),
                "SpectralField: dimension mismatch");
        const Index n = ctx_->n_modes();
        nodes_.resize(n, ctx_->grid().intervals + 1);
        gauss_.resize(n, ctx_->grid().num_gauss());
        VectorXd nodes(nodes_.cols()), gauss(gauss_.cols());
        for (Index k = 0; k < n; ++k) {
            detail::propagate(ctx_->propagator(k), ctx_->grid(), source_.row(k).transpose(), a_[k], nodes, gauss);
            nodes_.row(k) = nodes.transpose();
            gauss_.row(k) = gauss.transpose();
        }
    }

    static SpectralField zero(ContextPtr c) {
        return SpectralField(c, VectorXd::Zero(c->n_modes()), MatrixXd::Zero(c->n_modes(), c->grid().num_gauss()));
    }

    const ContextPtr& context() const { return ctx_; }
    Index n_modes() const { return ctx_->n_modes(); }
    const VectorXd& initial() const { return a_; }
    const MatrixXd& source() const { return source_; }
    const MatrixXd& node_values() const { return nodes_; }
    const MatrixXd& gauss_values() const { return gauss_; }
    MatrixXd gauss_derivatives() const { return source_ - ctx_->lambdas().asDiagonal() * gauss_; }

    ModeTrajectory mode(Index k) const {
        ModeTrajectory tr{ctx_->propagator(k), ctx_->grid(), nodes_.row(k).transpose(), source_.row(k).transpose(),
                          gauss_.row(k).transpose(), {}};
        tr.gauss_derivative = tr.source - tr.prop.lambda * tr.gauss;
        return tr;
    }

    /// Amplitudes and their time derivatives at time t.
    std::pair<VectorXd, VectorXd> at(double t) const {
        const auto [j, s] = ctx_->grid().locate(t);
        const Index Q = ctx_->grid().gauss_points();
        VectorXd v(n_modes()), d(n_modes());
        for (Index k = 0; k < n_modes(); ++k) {
            const auto [x, y] = ctx_->propagator(k).evaluate(nodes_(k, j), source_.row(k).segment(j * Q, Q).transpose(), s, ctx_->grid().step());
            v[k] = x;
            d[k] = y;
        }
        return {v, d};
    }

    /// Velocity coefficient vector at time t (requires a FEM basis).
    VectorXd velocity(double t) const {
        require(ctx_->basis() != nullptr, "SpectralField::velocity: context has no eigenbasis");
        return ctx_->basis()->reconstruct(at(t).first);
    }

    /// Per-interval integrals on the composite norm rule: lambda^2 theta^2,
    /// theta'^2 and theta^2.
    struct Integrals {
        MatrixXd D2, dt2, L2;  ///< n_modes x N
    };

    Integrals interval_integrals() const {
        const Index n = n_modes(), N = ctx_->grid().intervals, Q = ctx_->grid().gauss_points();
        const double h = ctx_->grid().step();
        Integrals I{MatrixXd::Zero(n, N), MatrixXd::Zero(n, N), MatrixXd::Zero(n, N)};
        for (Index k = 0; k < n; ++k) {
            const auto& P = ctx_->propagator(k);
            for (Index j = 0; j < N; ++j) {
                const VectorXd g = source_.row(k).segment(j * Q, Q).transpose();
                const VectorXd th = P.fine_decay * nodes_(k, j) + P.fine_weights * g;
                const VectorXd dth = P.fine_interp * g - P.lambda * th;
                for (std::size_t r = 0; r < P.fine_w.size(); ++r) {
                    const double w = h * P.fine_w[r];
                    const Index ri = static_cast<Index>(r);
                    I.L2(k, j) += w * th[ri] * th[ri];
                    I.dt2(k, j) += w * dth[ri] * dth[ri];
                }
                I.D2(k, j) = P.lambda * P.lambda * I.L2(k, j);
            }
        }
        return I;
    }

    /// ||u||_{L2(0,T;D)}
    double norm_L2D() const { return std::sqrt(interval_integrals().D2.sum()); }
    /// ||u'||_{L2(0,T;L2)}
    double norm_dt() const { return std::sqrt(interval_integrals().dt2.sum()); }
    /// ||u||_{L2(0,T;D)} + ||u'||_{L2(0,T;L2)}
    double norm_X() const {
        const auto I = interval_integrals();
        return std::sqrt(I.D2.sum()) + std::sqrt(I.dt2.sum());
    }
    double norm_L2L2() const { return std::sqrt(interval_integrals().L2.sum()); }

    /// sup_t ||u(t)||_V over grid nodes and the 16-point samples.
    double sup_V() const {
        const Index N = ctx_->grid().intervals, Q = ctx_->grid().gauss_points();
        const auto& lam = ctx_->lambdas();
        double best = 0.0;
        for (Index j = 0; j <= N; ++j) best = std::max(best, (lam.array() * nodes_.col(j).array().square()).sum());
        const Index F = static_cast<Index>(ctx_->fine_rule().size());
        for (Index j = 0; j < N; ++j) {
            VectorXd acc = VectorXd::Zero(F);
            for (Index k = 0; k < n_modes(); ++k) {
                const auto& P = ctx_->propagator(k);
                const VectorXd th = P.sample_decay * nodes_(k, j) + P.sample_weights * source_.row(k).segment(j * Q, Q).transpose();
                acc += lam[k] * th.cwiseAbs2();
            }
            best = std::max(best, acc.maxCoeff());
        }
        return std::sqrt(best);
    }

    SpectralField operator+(const SpectralField& o) const { return SpectralField(ctx_, a_ + o.a_, source_ + o.source_); }
    SpectralField operator-(const SpectralField& o) const { return SpectralField(ctx_, a_ - o.a_, source_ - o.source_); }
    SpectralField operator*(double s) const { return SpectralField(ctx_, a_ * s, source_ * s); }

 private:
    ContextPtr ctx_;
    VectorXd a_;
    MatrixXd source_;
    MatrixXd nodes_, gauss_;
};

/// Amplitudes of a time-dependent forcing and an initial field in the basis;
/// `forcing(t)` returns a velocity coefficient vector.
inline DataPair expand_data(ContextPtr ctx, const std::function<VectorXd(double)>& forcing, const VectorXd& u0) {
    require(ctx->basis() != nullptr, "expand_data: context has no eigenbasis");
    const EigenBasis& b = *ctx->basis();
    const TimeGrid& g = ctx->grid();
    DataPair d = DataPair::zero(ctx);
    d.a = b.project(u0);
    for (Index j = 0; j < g.intervals; ++j)
        for (Index q = 0; q < g.gauss_points(); ++q) d.mu.col(j * g.gauss_points() + q) = b.project(forcing(g.gauss_time(j, q)));
    return d;
}

/// ||f||_{L2(0,T;L2)} by the same Gauss sums.
inline double forcing_L2(ContextPtr ctx, const std::function<VectorXd(double)>& forcing) {
    const DiscreteSpaces& s = *ctx->basis()->spaces;
    const TimeGrid& g = ctx->grid();
    double acc = 0.0;
    for (Index j = 0; j < g.intervals; ++j)
        for (Index q = 0; q < g.gauss_points(); ++q) {
            const VectorXd f = forcing(g.gauss_time(j, q));
            acc += g.gauss_weight(q) * inner_L2(s, f, f);
        }
    return std::sqrt(acc);
}

/// Data from a modal forcing profile mu(k, t) sampled at the Gauss times.
inline DataPair sample_data(ContextPtr ctx, const std::function<double(Index, double)>& mu, const VectorXd& a) {
    require(a.size() == ctx->n_modes(), "sample_data: initial amplitude dimension mismatch");
    DataPair d = DataPair::zero(ctx);
    const TimeGrid& g = ctx->grid();
    for (Index j = 0; j < g.intervals; ++j)
        for (Index q = 0; q < g.gauss_points(); ++q)
            for (Index k = 0; k < ctx->n_modes(); ++k) d.mu(k, j * g.gauss_points() + q) = mu(k, g.gauss_time(j, q));
    d.a = a;
    return d;
}

inline SpectralField solve_stokes_evolution(const DataPair& d) { return SpectralField(d.ctx, d.a, d.mu); }

/// (u' + A u at the Gauss times; u(0))
inline DataPair apply_S(const SpectralField& u) {
    DataPair d;
    d.ctx = u.context();
    d.mu = u.gauss_derivatives() + u.context()->lambdas().asDiagonal() * u.gauss_values();
    d.a = u.node_values().col(0);
    return d;
}

struct EnergyReport {
    double max_mode_violation = 0.0;  ///< max over modes and grid nodes of lhs - rhs
    bool mode_ok = false;
    double sup_V = 0.0, dt_L2 = 0.0, D_L2 = 0.0, forcing_L2 = 0.0, initial_V = 0.0;
    double energy_lhs = 0.0, energy_rhs = 0.0;
    bool energy_ok = false;
    double dissipation_lhs = 0.0, dissipation_rhs = 0.0;
    bool dissipation_ok = false;
    double embedding_lhs = 0.0, embedding_rhs = 0.0;
    bool embedding_ok = false;
    /// (sup ||u||_V + ||u'||) / (||f|| + ||u0||_V); NaN for zero data.
    double measured_constant = 0.0;
    bool pass = false;
};

/// Per-mode energy identity bound at every grid node plus the summed bounds
/// with constants (2, 2) and (6, 4).
inline EnergyReport verify_energy_inequalities(const SpectralField& u, const DataPair& d, double tol = 1e-9) {
    const auto& ctx = *u.context();
    const TimeGrid& g = ctx.grid();
    const Index n = ctx.n_modes(), N = g.intervals, Q = g.gauss_points();
    const auto I = u.interval_integrals();
    EnergyReport r;
    r.max_mode_violation = -std::numeric_limits<double>::infinity();
    for (Index k = 0; k < n; ++k) {
        const double lam = ctx.lambdas()[k];
        double dt_acc = 0.0, mu_acc = 0.0;
        const double th0 = u.node_values()(k, 0);
        for (Index j = 0; j < N; ++j) {
            dt_acc += I.dt2(k, j);
            for (Index q = 0; q < Q; ++q) mu_acc += g.gauss_weight(q) * d.mu(k, j * Q + q) * d.mu(k, j * Q + q);
            const double th = u.node_values()(k, j + 1);
            const double lhs = dt_acc + lam * th * th;
            const double rhs = lam * th0 * th0 + mu_acc;
            r.max_mode_violation = std::max(r.max_mode_violation, lhs - rhs);
        }
    }
    r.mode_ok = r.max_mode_violation <= tol;
    r.sup_V = u.sup_V();
    r.dt_L2 = std::sqrt(I.dt2.sum());
    r.D_L2 = std::sqrt(I.D2.sum());
    r.forcing_L2 = d.forcing_norm();
    r.initial_V = d.initial_norm();
    r.energy_lhs = r.sup_V + r.dt_L2;
    r.energy_rhs = 2.0 * r.forcing_L2 + 2.0 * r.initial_V;
    r.energy_ok = r.energy_lhs <= r.energy_rhs + tol;
    r.dissipation_lhs = I.D2.sum();
    r.dissipation_rhs = 6.0 * r.forcing_L2 * r.forcing_L2 + 4.0 * r.initial_V * r.initial_V;
    r.dissipation_ok = r.dissipation_lhs <= r.dissipation_rhs + tol;
    r.embedding_lhs = r.sup_V * r.sup_V;
    r.embedding_rhs = r.initial_V * r.initial_V + 2.0 * r.D_L2 * r.dt_L2;
    // initial_V is measured from the data; the trajectory starts there exactly.
    r.embedding_ok = r.embedding_lhs <= r.embedding_rhs * (1 + 1e-12) + tol;
    const double denom = r.forcing_L2 + r.initial_V;
    r.measured_constant = denom > 0.0 ? r.energy_lhs / denom : std::numeric_limits<double>::quiet_NaN();
    r.pass = r.mode_ok && r.energy_ok && r.dissipation_ok && r.embedding_ok;
    return r;
}

inline nlohmann::json to_json(const EnergyReport& r) {
    return {{"max_mode_violation", r.max_mode_violation}, {"mode_ok", r.mode_ok},
            {"sup_V", r.sup_V}, {"dt_L2", r.dt_L2}, {"D_L2", r.D_L2},
            {"forcing_L2", r.forcing_L2}, {"initial_V", r.initial_V},
            {"bound_2_2", {{"lhs", r.energy_lhs}, {"rhs", r.energy_rhs}, {"ok", r.energy_ok}}},
            {"bound_6_4", {{"lhs", r.dissipation_lhs}, {"rhs", r.dissipation_rhs}, {"ok", r.dissipation_ok}}},
            {"embedding", {{"lhs", r.embedding_lhs}, {"rhs", r.embedding_rhs}, {"ok", r.embedding_ok}}},
            {"measured_constant", std::isfinite(r.measured_constant) ? nlohmann::json(r.measured_constant) : nlohmann::json(nullptr)},
            {"pass", r.pass}};
}

/// CSV with columns t, theta_1, dtheta_1, ... at the grid nodes.
inline void write_trajectories_csv(std::ostream& os, const SpectralField& u) {
    os.precision(17);
    os << 't';
    for (Index k = 0; k < u.n_modes(); ++k) os << ",theta_" << k + 1 << ",dtheta_" << k + 1;
    os << '\n';
    for (double t : u.context()->grid().nodes) {
        const auto [v, d] = u.at(t);
        os << t;
        for (Index k = 0; k < u.n_modes(); ++k) os << ',' << v[k] << ',' << d[k];
        os << '\n';
    }
}

}  // namespace mixedns
