#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "mixedns/common.hpp"

namespace mixedns {

/// Quadrature rule on [0, 1]; weights sum to one.
struct LineRule {
    std::vector<double> nodes;
    std::vector<double> weights;
    std::size_t size() const { return nodes.size(); }
};

/// n-point Gauss-Legendre rule mapped to [0, 1].
inline LineRule gauss_legendre(int n) {
    require(n >= 1, "gauss_legendre: need at least one point");
    LineRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    // Legendre P_n(x) and its derivative by the three-term recurrence.
    auto legendre = [n](double x) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        return std::make_pair(p1, n * (x * p1 - p0) / (x * x - 1.0));
    };
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(pi * (i + 0.75) / (n + 0.5));
        for (int it = 0; it < 100; ++it) {
            const auto [p, dp] = legendre(x);
            const double dx = p / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        const double dp = legendre(x).second;
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        const auto lo = static_cast<std::size_t>(i);
        const auto hi = static_cast<std::size_t>(n - 1 - i);
        rule.nodes[lo] = 0.5 * (1.0 - x);
        rule.nodes[hi] = 0.5 * (1.0 + x);
        rule.weights[lo] = rule.weights[hi] = 0.5 * w;
    }
    if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = 0.5;
    return rule;
}

/// Rule on a triangle in barycentric coordinates; weights sum to one
/// (multiply by the triangle area).
struct TriangleRule {
    std::vector<std::array<double, 3>> points;
    std::vector<double> weights;
    std::size_t size() const { return points.size(); }
};

/// Seven-point rule, exact for polynomials of degree 5.
inline const TriangleRule& triangle_rule_degree5() {
    static const TriangleRule rule = [] {
        TriangleRule r;
        const double s15 = std::sqrt(15.0);
        const double a = (6.0 - s15) / 21.0, b = (6.0 + s15) / 21.0;
        const double wa = (155.0 - s15) / 1200.0, wb = (155.0 + s15) / 1200.0;
        r.points = {{1.0 / 3, 1.0 / 3, 1.0 / 3},
                    {a, a, 1 - 2 * a}, {a, 1 - 2 * a, a}, {1 - 2 * a, a, a},
                    {b, b, 1 - 2 * b}, {b, 1 - 2 * b, b}, {1 - 2 * b, b, b}};
        r.weights = {9.0 / 40.0, wa, wa, wa, wb, wb, wb};
        return r;
    }();
    return rule;
}

}  // namespace mixedns
