#pragma once

#include <cmath>
#include <vector>

#include "hlab/construction.hpp"
#include "hlab/experiment.hpp"
#include "hlab/tree.hpp"

namespace hlab::testing {

// Haar system of depth m on the 1-torus: f_N = +1 on the left half of its
// dyadic interval, -1 on the right half.
inline FunctionSystem haar_system(int m, std::size_t G) {
    TorusGrid grid(1, G);
    std::vector<std::vector<double>> f(tree_size(m), std::vector<double>(G, 0.0));
    for (std::uint64_t N = 1; N <= tree_size(m); ++N) {
        auto t = decode(N);
        const double w = std::ldexp(1.0, -t.k);
        const double lo = static_cast<double>(t.j - 1) * w;
        for (std::size_t i = 0; i < G; ++i) {
            double x = (2.0 * static_cast<double>(i) + 1.0) / (2.0 * static_cast<double>(G));
            if (x < lo || x >= lo + w) continue;
            f[N - 1][i] = x < lo + w / 2 ? 1.0 : -1.0;
        }
    }
    return {m, grid, std::move(f)};
}

inline std::size_t cell_of(double x, std::size_t G) { return static_cast<std::size_t>(x * static_cast<double>(G)); }

// Random signed tree system: each cell walks down the tree picking a random
// sign and magnitude at every vertex and stops at a random depth.
inline FunctionSystem random_signed_system(int m, std::size_t G, std::uint64_t seed) {
    TorusGrid grid(1, G);
    Rng rng(seed);
    std::vector<std::vector<double>> f(tree_size(m), std::vector<double>(G, 0.0));
    for (std::size_t c = 0; c < G; ++c) {
        if (rng.uniform() < 0.05) continue;
        std::uint64_t N = 1;
        while (N <= tree_size(m)) {
            double s = rng.uniform() < 0.5 ? 1.0 : -1.0;
            f[N - 1][c] = s * rng.uniform(0.1, 2.0);
            if (rng.uniform() < 0.1) break;
            N = s > 0 ? left_child(N) : right_child(N);
        }
    }
    return {m, grid, std::move(f)};
}

// Small two-dimensional build used by several suites.
inline ConstructionState small_state(int m, std::uint64_t seed = 7, const std::string& kind = "uniform",
                                     int n = 2, std::size_t g_max = 1024) {
    ExperimentConfig c;
    c.n = n;
    c.m = m;
    c.seed = seed;
    c.direction_kind = kind;
    c.grid_start = n == 2 ? 64 : 16;
    c.grid_max = g_max;
    auto chain = experiment_chain(c, m);
    return experiment_state(c, m, chain);
}

} // namespace hlab::testing
