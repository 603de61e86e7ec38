#pragma once

#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mixedns/config.hpp"
#include "mixedns/corner_spectra.hpp"
#include "mixedns/navier_stokes.hpp"

namespace mixedns {

/// Report plus named text artifacts of one run.
struct ExperimentOutput {
    nlohmann::json report;
    std::map<std::string, std::string> files;
    bool pass = false;
};

inline std::string dump_report(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline ChannelMesh build_run_mesh(const RunConfig& c) {
    ChannelMesh m = build_channel_mesh(c.geometry);
    for (int k = 0; k < c.refine; ++k) m = refine(m);
    return m;
}

inline std::shared_ptr<const EigenBasis> build_run_basis(const RunConfig& c) {
    const auto spaces = assemble(std::make_shared<const ChannelMesh>(build_run_mesh(c)));
    return std::make_shared<const EigenBasis>(compute_eigenbasis(spaces, c.n_modes, c.eigen()));
}

/// Smooth random data: mu_k(t) = A (x_k + y_k t/T + z_k sin(2 pi t/T)) / lambda_k
/// and a_k = A w_k / lambda_k with standard normal coefficients. The
/// profile is a function of t, so it can be sampled on any time grid.
struct SmoothData {
    MatrixXd coeff;  ///< n_modes x 4
    VectorXd lambdas;
    double t_end = 1.0;
    double amplitude = 1.0;
    bool zero_forcing = false;

    static SmoothData random(const VectorXd& lambdas, double t_end, double amplitude, bool zero_forcing, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> nd;
        SmoothData s{MatrixXd(lambdas.size(), 4), lambdas, t_end, amplitude, zero_forcing};
        for (Index k = 0; k < lambdas.size(); ++k)
            for (Index c = 0; c < 4; ++c) s.coeff(k, c) = nd(rng);
        return s;
    }

    DataPair sample(ContextPtr ctx) const {
        require(ctx->n_modes() == lambdas.size(), "SmoothData: mode count mismatch");
        VectorXd a(lambdas.size());
        for (Index k = 0; k < a.size(); ++k) a[k] = amplitude * coeff(k, 3) / lambdas[k];
        if (zero_forcing) return sample_data(ctx, [](Index, double) { return 0.0; }, a);
        return sample_data(ctx, [this](Index k, double t) {
            const double s = t / t_end;
            return amplitude * (coeff(k, 0) + coeff(k, 1) * s + coeff(k, 2) * std::sin(2.0 * pi * s)) / lambdas[k];
        }, a);
    }
};

inline ExperimentOutput run_mesh(const RunConfig& c) {
    const ChannelMesh m = build_run_mesh(c);
    ExperimentOutput out;
    std::ostringstream vtk;
    write_vtk(vtk, m);
    out.files["mesh.json"] = dump_report(to_json(m));
    out.files["mesh.vtk"] = vtk.str();
    int nd = 0, nn = 0;
    for (const auto& e : m.boundary_edges()) (e.tag == BoundaryTag::Dirichlet ? nd : nn)++;
    out.pass = !m.corner_points().empty() || nn == 0;
    out.report = {{"schema", "mixedns.mesh_report/1"}, {"vertices", m.num_vertices()}, {"triangles", m.num_triangles()},
                  {"h", m.h()}, {"dirichlet_edges", nd}, {"neumann_edges", nn}, {"corner_points", m.corner_points()},
                  {"pass", out.pass}};
    return out;
}

inline ExperimentOutput run_eig(const RunConfig& c) {
    const auto basis = build_run_basis(c);
    const auto orth = orthogonality_report(*basis);
    const VectorXd res = constrained_residuals(*basis);
    ExperimentOutput out;
    std::ostringstream csv;
    write_modes_csv(csv, *basis);
    out.files["basis.json"] = dump_report(basis_to_json(*basis));
    out.files["modes.csv"] = csv.str();
    out.pass = orth.pass;
    out.report = {{"schema", "mixedns.eig_report/1"},
                  {"n_modes", basis->n_modes()},
                  {"lambdas", std::vector<double>(basis->lambdas.data(), basis->lambdas.data() + basis->n_modes())},
                  {"max_mass_defect", orth.max_mass_defect},
                  {"max_stiffness_defect", orth.max_stiffness_defect},
                  {"max_divergence", orth.max_divergence},
                  {"max_eigen_residual", res.size() ? res.maxCoeff() : 0.0},
                  {"pass", orth.pass}};
    return out;
}

namespace detail {

inline nlohmann::json corner_fits(const PointLocator& loc, const VectorXd& u, const VectorXd& q, double radius, int degree) {
    nlohmann::json fits = nlohmann::json::array();
    const auto& mesh = *loc.spaces().mesh;
    for (Index corner : mesh.corner_points()) {
        nlohmann::json f{{"vertex", corner}, {"x", mesh.vertex(corner).x()}, {"y", mesh.vertex(corner).y()}};
        try {
            f["fit"] = to_json(fit_singular_expansion(sample_corner(loc, u, q, corner, radius), radius, degree));
        } catch (const NumericalError& e) {
            f["error"] = e.what();
        }
        fits.push_back(f);
    }
    return fits;
}

}  // namespace detail

inline ExperimentOutput run_steady(const RunConfig& c) {
    const auto spaces = assemble(std::make_shared<const ChannelMesh>(build_run_mesh(c)));
    const Vec2 force(c.steady.force_x, c.steady.force_y);
    const VectorXd sigma = interpolate_velocity(*spaces, [&](const Vec2&) { return force; });
    const auto sol = solve_steady_stokes(*spaces, sigma);
    const PointLocator loc(spaces);
    const auto& mesh = *spaces->mesh;
    VtkPointData vel{"velocity", {}, 2}, pres{"pressure", {}, 1};
    for (Index v = 0; v < mesh.num_vertices(); ++v) {
        vel.values.push_back(sol.velocity[2 * v]);
        vel.values.push_back(sol.velocity[2 * v + 1]);
        pres.values.push_back(sol.pressure[v]);
    }
    ExperimentOutput out;
    std::ostringstream vtk;
    write_vtk(vtk, mesh, {vel, pres});
    out.files["steady.vtk"] = vtk.str();
    out.pass = sol.residual <= 1e-8 * std::max(1.0, force.norm());
    out.report = {{"schema", "mixedns.steady_report/1"},
                  {"residual", sol.residual},
                  {"stability_ratio", sol.stability_ratio},
                  {"velocity_V", std::sqrt(inner_V(*spaces, sol.velocity, sol.velocity))},
                  {"pressure_L2", std::sqrt(sol.pressure.dot(spaces->Mp * sol.pressure))},
                  {"corner_fits", detail::corner_fits(loc, sol.velocity, sol.pressure, c.steady.fit_radius, c.steady.fit_degree)},
                  {"pass", out.pass}};
    return out;
}

inline ExperimentOutput run_stokes(const RunConfig& c, std::shared_ptr<const EigenBasis> basis = nullptr) {
    if (!basis) basis = build_run_basis(c);
    const auto ctx = EvolutionContext::from_basis(basis, c.time_grid());
    const auto gen = SmoothData::random(basis->lambdas, c.time.t_end, c.stokes.amplitude, c.stokes.forcing == "zero", c.seed);
    const DataPair d = gen.sample(ctx);
    const auto u = solve_stokes_evolution(d);
    const auto energy = verify_energy_inequalities(u, d);
    const double roundtrip = (apply_S(u) - d).norm_Y();
    const bool roundtrip_ok = roundtrip <= 1e-9 * std::max(1.0, d.norm_Y());
    ExperimentOutput out;
    std::ostringstream csv;
    write_trajectories_csv(csv, u);
    out.files["trajectories.csv"] = csv.str();
    out.report = {{"schema", "mixedns.stokes_report/1"},
                  {"forcing", c.stokes.forcing},
                  {"data_norm_Y", d.norm_Y()},
                  {"norm_X", u.norm_X()},
                  {"roundtrip_defect", roundtrip},
                  {"roundtrip_ok", roundtrip_ok},
                  {"energy", to_json(energy)}};
    out.pass = energy.pass && roundtrip_ok;
    if (c.stokes.dt_halving) {
        TimeGrid fine = TimeGrid::uniform(c.time.t_end, 2 * c.time.intervals, c.time.gauss_points);
        const auto u2 = solve_stokes_evolution(gen.sample(EvolutionContext::from_basis(basis, fine)));
        const double change = std::abs(u2.norm_X() - u.norm_X());
        out.report["dt_halving"] = {{"norm_X_fine", u2.norm_X()}, {"change", change}, {"ok", change < 1e-8}};
        out.pass = out.pass && change < 1e-8;
    }
    out.report["pass"] = out.pass;
    return out;
}

inline ExperimentOutput run_ns(const RunConfig& c, std::shared_ptr<const EigenBasis> basis = nullptr) {
    if (!basis) basis = build_run_basis(c);
    const auto model = NavierStokesModel::build(basis, c.time_grid());
    ExperimentOutput out;
    out.report = {{"schema", "mixedns.ns_report/1"}, {"preset", c.ns.preset}};
    ContinuationReport rep;
    try {
        if (c.ns.preset == "manufactured") {
            const auto run = manufactured_newton(model, c.ns.target_norm, c.seed, c.newton());
            rep = run.result.report;
            out.report["target_norm"] = c.ns.target_norm;
            out.report["errors"] = run.errors;
            out.report["error_ratios"] = run.error_ratios;
            out.report["final_error"] = run.final_error;
            out.pass = rep.converged && run.final_error <= 1e-8;
        } else {
            const auto gen = SmoothData::random(basis->lambdas, c.time.t_end, 1.0, false, c.seed);
            const DataPair d = scale_to_stokes_norm(gen.sample(model.ctx), c.ns.amplitude);
            const auto res = solve_navier_stokes(model, d, c.newton());
            rep = res.report;
            out.report["data_norm_Y"] = d.norm_Y();
            out.report["solution_norm_X"] = res.solution.norm_X();
            out.pass = rep.converged;
        }
    } catch (const NumericalError& e) {
        rep.converged = false;
        out.report["error"] = e.what();
        out.pass = false;
    }
    out.report["continuation"] = to_json(rep);
    std::ostringstream csv;
    write_residual_history_csv(csv, rep);
    out.files["newton_history.csv"] = csv.str();
    out.report["pass"] = out.pass;
    return out;
}

inline ExperimentOutput run_perturb(const RunConfig& c, std::shared_ptr<const EigenBasis> basis = nullptr) {
    if (!basis) basis = build_run_basis(c);
    const auto model = NavierStokesModel::build(basis, c.time_grid());
    const auto gen = SmoothData::random(basis->lambdas, c.time.t_end, 1.0, false, c.seed);
    const DataPair base = scale_to_stokes_norm(gen.sample(model.ctx), c.perturb.base_norm);
    ExperimentOutput out;
    out.report = {{"schema", "mixedns.perturb_report/1"}, {"base_norm", c.perturb.base_norm}};
    try {
        const auto exp = perturbation_experiment(model, base, c.perturb.scales, c.perturb.trials, c.seed + 1, c.newton());
        nlohmann::json summary = nlohmann::json::array(), trials = nlohmann::json::array();
        bool all_converged = true;
        for (const auto& s : exp.summary) summary.push_back(to_json(s));
        std::ostringstream csv;
        csv.precision(17);
        csv << "scale,trial,shift_ratio,linear_prediction,iterations,converged\n";
        for (const auto& t : exp.trials) {
            all_converged = all_converged && t.report.converged;
            trials.push_back({{"scale", t.scale}, {"trial", t.trial}, {"shift_ratio", t.shift_ratio},
                              {"linear_prediction", t.linear_prediction}, {"report", to_json(t.report)}});
            csv << t.scale << ',' << t.trial << ',' << t.shift_ratio << ',' << t.linear_prediction << ','
                << t.report.newton_iterations << ',' << (t.report.converged ? 1 : 0) << '\n';
        }
        // Spread of shift / scale for a fixed direction across all scales.
        double spread = 0.0;
        for (int t = 0; t < c.perturb.trials; ++t) {
            double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
            for (const auto& tr : exp.trials)
                if (tr.trial == t) {
                    lo = std::min(lo, tr.shift_ratio);
                    hi = std::max(hi, tr.shift_ratio);
                }
            if (hi > 0.0) spread = std::max(spread, (hi - lo) / hi);
        }
        out.files["perturb_trials.csv"] = csv.str();
        out.report["base"] = to_json(exp.base_report);
        out.report["summary"] = summary;
        out.report["trials"] = trials;
        out.report["max_ratio_spread"] = spread;
        // Empirical convergence radius along the first direction.
        std::mt19937_64 rng(c.seed + 1);
        const DataPair dir = random_perturbation(model.ctx, rng);
        nlohmann::json scan = nlohmann::json::array();
        double radius = 0.0;
        for (double eps = 0.01; eps <= 1000.0; eps *= 2.0) {
            const auto res = solve_navier_stokes(model, base + dir * eps, c.newton(), exp.base);
            scan.push_back({{"scale", eps}, {"converged", res.report.converged}, {"iterations", res.report.newton_iterations}});
            if (!res.report.converged) break;
            radius = eps;
        }
        out.report["radius_scan"] = scan;
        out.report["empirical_radius"] = radius;
        out.report["all_converged"] = all_converged;
        out.pass = all_converged && spread <= c.perturb.agreement;
    } catch (const NumericalError& e) {
        out.report["error"] = e.what();
        out.pass = false;
    }
    out.report["pass"] = out.pass;
    return out;
}

inline ExperimentOutput run_corner(const RunConfig& c) {
    ExperimentOutput out;
    const auto rep = analyze_strip(c.corner.window);
    bool consistent = rep.winding_count == static_cast<int>(rep.roots.size());
    for (const auto& r : rep.roots) consistent = consistent && r.simple;
    std::ostringstream grid;
    write_determinant_grid_csv(grid, c.corner.window, c.corner.grid_re, c.corner.grid_im);
    out.files["determinant_grid.csv"] = grid.str();
    out.files["roots.json"] = dump_report(to_json(rep));
    const auto at = [](Complex l) {
        const Complex v = reduced_characteristic(l);
        return nlohmann::json{{"re", v.real()}, {"im", v.imag()}};
    };
    out.report = {{"schema", "mixedns.corner_report/1"},
                  {"roots", to_json(rep)},
                  {"reference_values", {{"lambda_minus_i", at({0.0, -1.0})}, {"lambda_zero", at(0.0)}, {"lambda_minus_2i", at({0.0, -2.0})}}},
                  {"consistent", consistent}};
    out.pass = consistent;
    if (c.corner.fit) {
        const auto spaces = assemble(std::make_shared<const ChannelMesh>(build_run_mesh(c)));
        const Vec2 force(c.steady.force_x, c.steady.force_y);
        const auto sol = solve_steady_stokes(*spaces, interpolate_velocity(*spaces, [&](const Vec2&) { return force; }));
        const PointLocator loc(spaces);
        const auto fits = detail::corner_fits(loc, sol.velocity, sol.pressure, c.steady.fit_radius, c.steady.fit_degree);
        out.report["singular_fits"] = fits;
        out.files["singular_fit.json"] = dump_report(fits);
    }
    out.report["pass"] = out.pass;
    return out;
}

}  // namespace mixedns
