// Evolution Navier-Stokes in a coarse channel: Newton from the Stokes guess.

#include <cstdio>
#include <memory>
#include <random>

#include "mixedns/navier_stokes.hpp"

int main() {
    using namespace mixedns;
    const auto spaces = assemble(std::make_shared<const ChannelMesh>(build_channel_mesh({3.0, 1.0, 12, 4, 1.0})));
    const auto basis = std::make_shared<const EigenBasis>(compute_eigenbasis(spaces, 8));
    const auto model = NavierStokesModel::build(basis, TimeGrid::uniform(1.0, 32, 4));
    std::mt19937_64 rng(1);
    const DataPair d = scale_to_stokes_norm(random_perturbation(model.ctx, rng), 20.0);
    NewtonOptions opt;
    opt.observer = [&](const SpectralField& u) { std::printf("  |N(u) - d|_Y = %.3e\n", (apply_N(model, u) - d).norm_Y()); };
    const auto res = solve_navier_stokes(model, d, opt);
    std::printf("converged: %s after %d iterations, |u|_X = %.6f\n", res.report.converged ? "yes" : "no",
                res.report.newton_iterations, res.solution.norm_X());
    return res.report.converged ? 0 : 1;
}
