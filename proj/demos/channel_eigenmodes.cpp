// Lowest Stokes eigenvalues of a coarse channel.

#include <cstdio>
#include <memory>

#include "mixedns/stokes_basis.hpp"

int main() {
    using namespace mixedns;
    const auto spaces = assemble(std::make_shared<const ChannelMesh>(build_channel_mesh({3.0, 1.0, 24, 8, 1.0})));
    const auto basis = compute_eigenbasis(spaces, 8);
    const auto orth = orthogonality_report(basis);
    for (Index k = 0; k < basis.n_modes(); ++k) std::printf("lambda_%ld = %.10f\n", static_cast<long>(k + 1), basis.lambdas[k]);
    std::printf("mass defect %.3e, stiffness defect %.3e\n", orth.max_mass_defect, orth.max_stiffness_defect);
    return orth.pass ? 0 : 1;
}
