#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cytoforge/image.hpp"

namespace cytoforge::poisson {

// Paste rectangle in canvas coordinates. An empty mask means the default
// region: the rectangle minus its one-pixel border. A non-empty mask selects
// pixels within the rectangle (row-major, 0/1).
struct PasteRegion {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;
    std::vector<uint8_t> mask;

    bool in_default_interior(int lx, int ly) const {
        return lx >= 1 && ly >= 1 && lx < width - 1 && ly < height - 1;
    }
    bool omega(int lx, int ly) const {
        if (mask.empty()) return in_default_interior(lx, ly);
        return mask[static_cast<size_t>(ly) * width + lx] != 0;
    }
};

// 5-point Laplacian over the unknowns of a paste region, matrix-free.
// neighbors[i] holds the unknown index of each 4-neighbor or -1 when the
// neighbor is a boundary pixel (its target value is already folded into rhs).
struct LaplacianSystem {
    PasteRegion region;
    int canvas_width = 0;
    int canvas_height = 0;
    int n_unknowns = 0;
    std::vector<int32_t> index_map;  // region.width*height, -1 outside omega
    std::vector<std::array<int32_t, 4>> neighbors;
    std::array<std::vector<double>, 3> rhs;
    std::array<std::vector<double>, 3> initial;  // target values in omega
};

struct SolverParams {
    double rel_tol = 1e-6;
    int max_iter = 10000;
};

struct CgResult {
    std::vector<double> x;
    double rel_residual = 0.0;
    int iterations = 0;
    // True relative residual recomputed every 10 iterations.
    std::vector<double> checkpoints;
};

// Guidance-field assembly: for p in omega and channel c,
// rhs_p = sum_{q in N4(p)} (g_p - g_q) + sum_{q in N4(p), q not in omega} f*_q
// with g the source patch and f* the canvas. Source gradients across the
// patch edge count as zero.
LaplacianSystem assemble_system(const RasterImage& source, const RasterImage& target,
                                const PasteRegion& region);

// Conjugate gradient, stops at ||r||/||b|| <= rel_tol. Throws
// ConvergenceError when max_iter is exhausted first.
CgResult solve_cg(const LaplacianSystem& system, const SolverParams& params,
                  const std::vector<double>& rhs, const std::vector<double>& initial_guess);

// All three channels with the stored rhs/initial guesses.
std::array<CgResult, 3> solve_channels(const LaplacianSystem& system, const SolverParams& params);

// Target outside omega bit-identical; omega pixels rounded half away from
// zero and clamped to [0,255].
RasterImage compose(const std::array<std::vector<double>, 3>& solution, const RasterImage& target,
                    const LaplacianSystem& system);

}  // namespace cytoforge::poisson
