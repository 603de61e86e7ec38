#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <nlohmann/json.hpp>

#include "mixedns/fem_assembly.hpp"

namespace mixedns {

/// Factorised saddle-point operator [A B^T; B 0] on free velocity dofs.
/// Without a Neumann boundary the pressure mean is pinned by one extra
/// Lagrange multiplier.
class SaddlePointSolver {
 public:
    SaddlePointSolver(const DiscreteSpaces& s, const SparseMatrix& A_free) : s_(s) {
        const SparseMatrix Bf = s.free_divergence();
        nv_ = s.num_free();
        np_ = s.ndof_p;
        const Index extra = s.pressure_constant_mode ? 1 : 0;
        const Index n = nv_ + np_ + extra;
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(A_free.nonZeros() + 2 * Bf.nonZeros() + 2 * np_));
        for (Index c = 0; c < A_free.outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(A_free, c); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
        for (Index c = 0; c < Bf.outerSize(); ++c)
            for (SparseMatrix::InnerIterator it(Bf, c); it; ++it) {
                trip.emplace_back(nv_ + it.row(), it.col(), it.value());
                trip.emplace_back(it.col(), nv_ + it.row(), it.value());
            }
        if (extra) {
            const VectorXd mean = s.Mp * VectorXd::Ones(np_);
            for (Index i = 0; i < np_; ++i) {
                trip.emplace_back(nv_ + np_, nv_ + i, mean[i]);
                trip.emplace_back(nv_ + i, nv_ + np_, mean[i]);
            }
        }
        matrix_.resize(n, n);
        matrix_.setFromTriplets(trip.begin(), trip.end());
        matrix_.makeCompressed();
        lu_.analyzePattern(matrix_);
        lu_.factorize(matrix_);
        if (lu_.info() != Eigen::Success)
            throw InfSupError("saddle-point factorisation failed (singular system: inf-sup condition violated?)");
    }

    /// Solves for (velocity on free dofs, pressure) given the velocity and
    /// pressure right-hand sides.
    std::pair<VectorXd, VectorXd> solve(const VectorXd& rhs_v, const VectorXd& rhs_p) const {
        VectorXd rhs = VectorXd::Zero(matrix_.rows());
        rhs.head(nv_) = rhs_v;
        rhs.segment(nv_, np_) = rhs_p;
        const VectorXd x = lu_.solve(rhs);
        if (lu_.info() != Eigen::Success || !x.allFinite()) throw InfSupError("saddle-point solve failed");
        const double res = (matrix_ * x - rhs).norm();
        if (res > 1e-6 * std::max(1.0, rhs.norm())) throw InfSupError("saddle-point solve inaccurate: singular system");
        return {x.head(nv_), x.segment(nv_, np_)};
    }

    VectorXd solve_velocity(const VectorXd& rhs_v) const { return solve(rhs_v, VectorXd::Zero(np_)).first; }

    Index num_velocity() const { return nv_; }

 private:
    const DiscreteSpaces& s_;
    Index nv_ = 0, np_ = 0;
    SparseMatrix matrix_;
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_;
};

struct SteadySolution {
    VectorXd velocity;  ///< all velocity dofs, Dirichlet dofs zero
    VectorXd pressure;
    double residual = 0.0;  ///< weak-form residual on free dofs
    /// (|u|_V + |q|_L2) / |sigma|_L2, zero for zero forcing.
    double stability_ratio = 0.0;
};

/// Steady Stokes with homogeneous Dirichlet data on the walls and the
/// natural do-nothing condition elsewhere; `sigma` is a velocity-space
/// coefficient vector.
inline SteadySolution solve_steady_stokes(const DiscreteSpaces& s, const VectorXd& sigma) {
    require(sigma.size() == s.ndof_v, "solve_steady_stokes: forcing dimension mismatch");
    const SparseMatrix Kf = s.free_block(s.K);
    SaddlePointSolver solver(s, Kf);
    const VectorXd rhs = s.restrict_to_free(s.M * sigma);
    auto [uf, q] = solver.solve(rhs, VectorXd::Zero(s.ndof_p));
    SteadySolution out;
    out.velocity = s.extend_from_free(uf);
    out.pressure = q;
    const SparseMatrix Bf = s.free_divergence();
    out.residual = (Kf * uf + SparseMatrix(Bf.transpose()) * q - rhs).norm() + (Bf * uf).norm();
    const double fs = std::sqrt(std::max(0.0, inner_L2(s, sigma, sigma)));
    if (fs > 0.0)
        out.stability_ratio = (std::sqrt(inner_V(s, out.velocity, out.velocity)) + std::sqrt(q.dot(s.Mp * q))) / fs;
    return out;
}

/// Discrete Stokes eigenpairs ((phi_k, v)) = lambda_k (phi_k, v) over the
/// discretely divergence-free, wall-constrained velocity space.
struct EigenBasis {
    std::shared_ptr<const DiscreteSpaces> spaces;
    VectorXd lambdas;  ///< ascending
    MatrixXd modes;    ///< ndof_v x n_modes, L2-orthonormal

    Index n_modes() const { return lambdas.size(); }

    /// Amplitudes a_k = (u, phi_k).
    VectorXd project(const VectorXd& u) const {
        require(u.size() == spaces->ndof_v, "EigenBasis::project: dimension mismatch");
        return modes.transpose() * (spaces->M * u);
    }

    VectorXd reconstruct(const VectorXd& a) const {
        require(a.size() == n_modes(), "EigenBasis::reconstruct: dimension mismatch");
        return modes * a;
    }
};

enum class EigenMethod { Auto, DenseNullspace, ShiftInvertLanczos };

struct EigenOptions {
    EigenMethod method = EigenMethod::Auto;
    double tolerance = 1e-10;
    /// Auto switches to Lanczos above this many free velocity dofs.
    Index dense_limit = 800;
    Index max_krylov = 800;
    std::uint64_t seed = 20240521;
};

namespace detail {

// Deterministic sign: largest-magnitude entry positive.
inline void fix_signs(MatrixXd& V) {
    for (Index k = 0; k < V.cols(); ++k) {
        Index imax = 0;
        V.col(k).cwiseAbs().maxCoeff(&imax);
        if (V(imax, k) < 0) V.col(k) *= -1.0;
    }
}

// Rayleigh-Ritz in span(Y) with the true K and M; returns ascending pairs.
inline std::pair<VectorXd, MatrixXd> rayleigh_ritz(const SparseMatrix& Kf, const SparseMatrix& Mf, const MatrixXd& Y) {
    MatrixXd Kr = Y.transpose() * (Kf * Y);
    MatrixXd Mr = Y.transpose() * (Mf * Y);
    Kr = (0.5 * (Kr + Kr.transpose())).eval();
    Mr = (0.5 * (Mr + Mr.transpose())).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(Kr, Mr);
    if (es.info() != Eigen::Success) throw NumericalError("Rayleigh-Ritz eigensolver failed");
    MatrixXd V = Y * es.eigenvectors();
    // One Gram-Schmidt pass in M against rounding.
    for (Index k = 0; k < V.cols(); ++k) {
        for (Index j = 0; j < k; ++j) V.col(k) -= V.col(j).dot(Mf * V.col(k)) * V.col(j);
        V.col(k) /= std::sqrt(V.col(k).dot(Mf * V.col(k)));
    }
    VectorXd lam(V.cols());
    for (Index k = 0; k < V.cols(); ++k) lam[k] = V.col(k).dot(Kf * V.col(k));
    return {lam, V};
}

inline std::pair<VectorXd, MatrixXd> eig_dense_nullspace(const DiscreteSpaces& s, Index n_modes) {
    const MatrixXd Bt = MatrixXd(s.free_divergence()).transpose();
    Eigen::ColPivHouseholderQR<MatrixXd> qr(Bt);
    qr.setThreshold(1e-10);
    const Index rank = qr.rank();
    const Index dim = Bt.rows() - rank;
    if (n_modes > dim)
        throw InvalidArgument("compute_eigenbasis: n_modes exceeds the divergence-free subspace dimension " + std::to_string(dim));
    const MatrixXd Q = qr.householderQ();
    const MatrixXd Z = Q.rightCols(dim);
    const SparseMatrix Kf = s.free_block(s.K), Mf = s.free_block(s.M);
    MatrixXd Kz = Z.transpose() * (Kf * Z);
    MatrixXd Mz = Z.transpose() * (Mf * Z);
    Kz = (0.5 * (Kz + Kz.transpose())).eval();
    Mz = (0.5 * (Mz + Mz.transpose())).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(Kz, Mz);
    if (es.info() != Eigen::Success) throw NumericalError("compute_eigenbasis: dense eigensolver did not converge");
    const MatrixXd Y = Z * es.eigenvectors().leftCols(n_modes);
    return rayleigh_ritz(Kf, Mf, Y);
}

// Lanczos with full M-reorthogonalisation on x -> A^-1 M x, where A is the
// stiffness saddle-point operator; Ritz values are 1 / lambda.
inline std::pair<VectorXd, MatrixXd> eig_lanczos(const DiscreteSpaces& s, Index n_modes, const EigenOptions& opt) {
    const SparseMatrix Kf = s.free_block(s.K), Mf = s.free_block(s.M);
    SaddlePointSolver solver(s, Kf);
    const Index n = s.num_free();
    const Index div_free_dim = n - s.ndof_p + (s.pressure_constant_mode ? 1 : 0);
    if (n_modes > div_free_dim)
        throw InvalidArgument("compute_eigenbasis: n_modes exceeds the divergence-free subspace dimension");
    const Index max_m = std::min(opt.max_krylov, div_free_dim);
    auto op = [&](const VectorXd& x) { return solver.solve_velocity(Mf * x); };
    auto mnorm = [&](const VectorXd& x) { return std::sqrt(x.dot(Mf * x)); };

    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> nd;
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v[i] = nd(rng);
    v = op(v);
    v /= mnorm(v);

    MatrixXd Q(n, max_m);
    std::vector<double> alpha, beta;
    Q.col(0) = v;
    for (Index j = 0; j < max_m; ++j) {
        VectorXd w = op(Q.col(j));
        const double a = Q.col(j).dot(Mf * w);
        alpha.push_back(a);
        for (int pass = 0; pass < 2; ++pass) {
            const VectorXd Mw = Mf * w;
            w -= Q.leftCols(j + 1) * (Q.leftCols(j + 1).transpose() * Mw);
        }
        const double b = mnorm(w);
        const Index m = j + 1;
        const bool check = m >= n_modes + 2 && (m % 5 == 0 || m == max_m || b < 1e-13);
        if (check) {
            MatrixXd T = MatrixXd::Zero(m, m);
            for (Index i = 0; i < m; ++i) {
                T(i, i) = alpha[static_cast<std::size_t>(i)];
                if (i + 1 < m) T(i, i + 1) = T(i + 1, i) = beta[static_cast<std::size_t>(i)];
            }
            Eigen::SelfAdjointEigenSolver<MatrixXd> es(T);
            const VectorXd theta = es.eigenvalues();
            const MatrixXd S = es.eigenvectors();
            bool converged = true;
            for (Index i = 0; i < n_modes; ++i) {
                const Index col = m - 1 - i;
                if (std::abs(b * S(m - 1, col)) > opt.tolerance * std::abs(theta[col])) converged = false;
            }
            if (converged || b < 1e-13) {
                if (!converged && m < n_modes) throw NumericalError("compute_eigenbasis: Lanczos breakdown");
                MatrixXd Y(n, n_modes);
                for (Index i = 0; i < n_modes; ++i) Y.col(i) = Q.leftCols(m) * S.col(m - 1 - i);
                return rayleigh_ritz(Kf, Mf, Y);
            }
        }
        if (j + 1 < max_m) {
            beta.push_back(b);
            Q.col(j + 1) = w / b;
        }
    }
    throw NumericalError("compute_eigenbasis: Lanczos did not converge within " + std::to_string(max_m) + " iterations");
}

}  // namespace detail

/// Dimension of the discretely divergence-free free-dof subspace (dense rank
/// computation, small meshes only).
inline Index divergence_free_dimension(const DiscreteSpaces& s) {
    const MatrixXd Bt = MatrixXd(s.free_divergence()).transpose();
    Eigen::ColPivHouseholderQR<MatrixXd> qr(Bt);
    qr.setThreshold(1e-10);
    return Bt.rows() - qr.rank();
}

/// Smallest `n_modes` Stokes eigenpairs, L2-orthonormal.
inline EigenBasis compute_eigenbasis(std::shared_ptr<const DiscreteSpaces> s, Index n_modes, const EigenOptions& opt = {}) {
    require(s != nullptr, "compute_eigenbasis: null spaces");
    require(n_modes >= 1, "compute_eigenbasis: n_modes must be positive");
    EigenMethod method = opt.method;
    if (method == EigenMethod::Auto)
        method = s->num_free() <= opt.dense_limit ? EigenMethod::DenseNullspace : EigenMethod::ShiftInvertLanczos;
    auto [lam, V] = method == EigenMethod::DenseNullspace ? detail::eig_dense_nullspace(*s, n_modes)
                                                          : detail::eig_lanczos(*s, n_modes, opt);
    detail::fix_signs(V);
    EigenBasis b;
    b.spaces = s;
    b.lambdas = lam;
    b.modes = s->extend_from_free(V);
    return b;
}

/// Gram matrices of the modes under M and K.
inline MatrixXd mass_gram(const EigenBasis& b) { return b.modes.transpose() * (b.spaces->M * b.modes); }
inline MatrixXd stiffness_gram(const EigenBasis& b) { return b.modes.transpose() * (b.spaces->K * b.modes); }

struct OrthogonalityReport {
    double max_mass_defect = 0.0;       ///< max |(phi_j, phi_k) - delta_jk|
    double max_stiffness_defect = 0.0;  ///< max |((phi_j, phi_k)) - lambda_k delta_jk| / lambda_k
    double max_divergence = 0.0;        ///< max |B phi_k| / |phi_k|
    bool pass = false;
};

inline OrthogonalityReport orthogonality_report(const EigenBasis& b, double mass_tol = 1e-8, double stiff_tol = 1e-6) {
    OrthogonalityReport r;
    const MatrixXd G = mass_gram(b), S = stiffness_gram(b);
    for (Index j = 0; j < b.n_modes(); ++j)
        for (Index k = 0; k < b.n_modes(); ++k) {
            r.max_mass_defect = std::max(r.max_mass_defect, std::abs(G(j, k) - (j == k ? 1.0 : 0.0)));
            const double lk = b.lambdas[std::max(j, k)];
            r.max_stiffness_defect = std::max(r.max_stiffness_defect, std::abs(S(j, k) - (j == k ? b.lambdas[k] : 0.0)) / lk);
        }
    for (Index k = 0; k < b.n_modes(); ++k)
        r.max_divergence = std::max(r.max_divergence, (b.spaces->B * b.modes.col(k)).norm() / b.modes.col(k).norm());
    bool ascending = b.lambdas.minCoeff() > 0.0;
    for (Index k = 1; k < b.n_modes(); ++k) ascending = ascending && b.lambdas[k] >= b.lambdas[k - 1];
    r.pass = ascending && r.max_mass_defect <= mass_tol && r.max_stiffness_defect <= stiff_tol && r.max_divergence <= 1e-8;
    return r;
}

/// Eigen-relation residuals sup_{v div-free} (K phi - lambda M phi, v) / |v|_L2,
/// relative to lambda_k, one per mode.
inline VectorXd constrained_residuals(const EigenBasis& b) {
    const DiscreteSpaces& s = *b.spaces;
    const SparseMatrix Mf = s.free_block(s.M), Kf = s.free_block(s.K);
    SaddlePointSolver proj(s, Mf);
    VectorXd out(b.n_modes());
    for (Index k = 0; k < b.n_modes(); ++k) {
        const VectorXd phi = s.restrict_to_free(b.modes.col(k));
        const VectorXd r = Kf * phi - b.lambdas[k] * (Mf * phi);
        const VectorXd z = proj.solve_velocity(r);
        out[k] = std::sqrt(std::max(0.0, z.dot(Mf * z))) / b.lambdas[k];
    }
    return out;
}

inline double norm_L2(const VectorXd& a) { return a.norm(); }

/// (sum lambda_k a_k^2)^(1/2)
inline double norm_V(const VectorXd& a, const EigenBasis& b) {
    require(a.size() == b.n_modes(), "norm_V: amplitude count mismatch");
    return std::sqrt((b.lambdas.array() * a.array().square()).sum());
}

/// (sum lambda_k^2 a_k^2)^(1/2), the norm of the Stokes-operator domain.
inline double norm_D(const VectorXd& a, const EigenBasis& b) {
    require(a.size() == b.n_modes(), "norm_D: amplitude count mismatch");
    return std::sqrt((b.lambdas.array().square() * a.array().square()).sum());
}

inline nlohmann::json basis_to_json(const EigenBasis& b) {
    const auto rep = orthogonality_report(b);
    nlohmann::json j;
    j["schema"] = "mixedns.basis/1";
    j["n_modes"] = b.n_modes();
    j["ndof_v"] = b.spaces->ndof_v;
    j["lambdas"] = std::vector<double>(b.lambdas.data(), b.lambdas.data() + b.lambdas.size());
    j["orthogonality"] = {{"max_mass_defect", rep.max_mass_defect},
                          {"max_stiffness_defect", rep.max_stiffness_defect},
                          {"max_divergence", rep.max_divergence},
                          {"pass", rep.pass}};
    return j;
}

/// Mode vectors as CSV: one row per velocity dof.
inline void write_modes_csv(std::ostream& os, const EigenBasis& b) {
    os.precision(17);
    os << "dof";
    for (Index k = 0; k < b.n_modes(); ++k) os << ",phi_" << k + 1;
    os << '\n';
    for (Index i = 0; i < b.modes.rows(); ++i) {
        os << i;
        for (Index k = 0; k < b.n_modes(); ++k) os << ',' << b.modes(i, k);
        os << '\n';
    }
}

/// Rebuilds a basis from its JSON/CSV export without re-solving.
inline EigenBasis load_basis(std::shared_ptr<const DiscreteSpaces> s, const nlohmann::json& j, std::istream& csv) {
    EigenBasis b;
    b.spaces = s;
    const auto lam = j.at("lambdas").get<std::vector<double>>();
    require(j.at("ndof_v").get<Index>() == s->ndof_v, "load_basis: basis was computed on a different mesh");
    b.lambdas = Eigen::Map<const VectorXd>(lam.data(), static_cast<Index>(lam.size()));
    b.modes.resize(s->ndof_v, b.n_modes());
    std::string line;
    std::getline(csv, line);
    for (Index i = 0; i < s->ndof_v; ++i) {
        require(static_cast<bool>(std::getline(csv, line)), "load_basis: truncated mode CSV");
        std::stringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        for (Index k = 0; k < b.n_modes(); ++k) {
            require(static_cast<bool>(std::getline(ls, cell, ',')), "load_basis: short CSV row");
            b.modes(i, k) = std::stod(cell);
        }
    }
    return b;
}

}  // namespace mixedns
