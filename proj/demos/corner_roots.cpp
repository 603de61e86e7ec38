// Pencil eigenvalues near the wall/outflow corner.

#include <cstdio>

#include "mixedns/corner_spectra.hpp"

int main() {
    using namespace mixedns;
    const Rect windows[] = {Rect{}, Rect{-1.0, 1.0, -2.5, -0.5}, Rect{-5.0, 5.0, -4.5, -3.0}};
    for (const auto& w : windows) {
        const auto rep = analyze_strip(w);
        std::printf("Re in [%g, %g], Im in [%g, %g]: %d root(s)\n", w.re_lo, w.re_hi, w.im_lo, w.im_hi, rep.winding_count);
        for (const auto& r : rep.roots)
            std::printf("  lambda = %+.12f %+.12fi  |D'| = %.4f\n", r.root.real(), r.root.imag(), r.simplicity);
    }
    return 0;
}
