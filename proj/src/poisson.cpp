#include "cytoforge/poisson.hpp"

#include <cmath>

#include "cytoforge/kernels.hpp"

namespace cytoforge::poisson {

namespace {

constexpr int kCheckpointEvery = 10;

const std::array<std::array<int, 2>, 4> kN4 = {{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};

double norm2(const std::vector<double>& v) { return std::sqrt(kern::dot(v, v)); }

}  // namespace

LaplacianSystem assemble_system(const RasterImage& source, const RasterImage& target,
                                const PasteRegion& region) {
    check(region.width >= 1 && region.height >= 1, Error::Kind::InvalidArgument,
          "paste region must be non-degenerate");
    check(source.width == region.width && source.height == region.height,
          Error::Kind::DimensionMismatch, "source patch ", source.width, "x", source.height,
          " does not match region ", region.width, "x", region.height);
    check(region.x >= 0 && region.y >= 0 && region.x + region.width <= target.width &&
              region.y + region.height <= target.height,
          Error::Kind::InvalidArgument, "paste region exceeds canvas bounds");
    if (!region.mask.empty()) {
        check(region.mask.size() == static_cast<size_t>(region.width) * region.height,
              Error::Kind::DimensionMismatch, "region mask size does not match rectangle");
    }

    LaplacianSystem sys;
    sys.region = region;
    sys.canvas_width = target.width;
    sys.canvas_height = target.height;
    sys.index_map.assign(static_cast<size_t>(region.width) * region.height, -1);

    std::vector<std::array<int, 2>> omega_px;
    for (int ly = 0; ly < region.height; ++ly) {
        for (int lx = 0; lx < region.width; ++lx) {
            if (!region.omega(lx, ly)) continue;
            const int cx = region.x + lx;
            const int cy = region.y + ly;
            check(cx > 0 && cy > 0 && cx < target.width - 1 && cy < target.height - 1,
                  Error::Kind::InvalidArgument, "omega pixel (", cx, ",", cy,
                  ") touches the canvas edge; all 4 neighbors must exist");
            sys.index_map[static_cast<size_t>(ly) * region.width + lx] =
                static_cast<int32_t>(omega_px.size());
            omega_px.push_back({lx, ly});
        }
    }
    sys.n_unknowns = static_cast<int>(omega_px.size());
    check(sys.n_unknowns > 0, Error::Kind::InvalidArgument, "empty omega in paste region");

    sys.neighbors.resize(omega_px.size());
    for (auto& ch : sys.rhs) ch.assign(omega_px.size(), 0.0);
    for (auto& ch : sys.initial) ch.assign(omega_px.size(), 0.0);

    for (size_t i = 0; i < omega_px.size(); ++i) {
        const int lx = omega_px[i][0];
        const int ly = omega_px[i][1];
        const int cx = region.x + lx;
        const int cy = region.y + ly;
        const uint8_t* gp = source.px(lx, ly);
        for (int c = 0; c < 3; ++c) sys.initial[c][i] = target.px(cx, cy)[c];

        for (int k = 0; k < 4; ++k) {
            const int qlx = lx + kN4[k][0];
            const int qly = ly + kN4[k][1];
            const int qcx = cx + kN4[k][0];
            const int qcy = cy + kN4[k][1];
            const bool q_in_rect =
                qlx >= 0 && qly >= 0 && qlx < region.width && qly < region.height;
            const bool q_in_omega = q_in_rect && region.omega(qlx, qly);
            sys.neighbors[i][k] =
                q_in_omega ? sys.index_map[static_cast<size_t>(qly) * region.width + qlx] : -1;
            for (int c = 0; c < 3; ++c) {
                const double g_p = gp[c];
                const double g_q = q_in_rect ? source.px(qlx, qly)[c] : g_p;
                sys.rhs[c][i] += g_p - g_q;
                if (!q_in_omega) sys.rhs[c][i] += target.px(qcx, qcy)[c];
            }
        }
    }
    return sys;
}

CgResult solve_cg(const LaplacianSystem& system, const SolverParams& params,
                  const std::vector<double>& rhs, const std::vector<double>& initial_guess) {
    check(params.rel_tol > 0.0, Error::Kind::InvalidArgument, "rel_tol must be positive");
    check(params.max_iter >= 1, Error::Kind::InvalidArgument, "max_iter must be >= 1");
    const size_t n = system.neighbors.size();
    check(rhs.size() == n && initial_guess.size() == n, Error::Kind::DimensionMismatch,
          "rhs/initial size does not match system unknowns");

    CgResult res;
    res.x = initial_guess;

    const double b_norm = norm2(rhs);
    if (b_norm == 0.0) {
        // SPD system with zero rhs: the unique solution is zero.
        res.x.assign(n, 0.0);
        res.rel_residual = 0.0;
        res.iterations = 0;
        res.checkpoints.push_back(0.0);
        return res;
    }

    std::vector<double> r(n), p(n), ap(n);
    kern::laplacian_apply(system.neighbors, res.x.data(), ap.data());
    for (size_t i = 0; i < n; ++i) r[i] = rhs[i] - ap[i];
    p = r;

    double rr = kern::dot(r, r);
    double rel = std::sqrt(rr) / b_norm;
    res.checkpoints.push_back(rel);
    if (rel <= params.rel_tol) {
        res.rel_residual = rel;
        res.iterations = 0;
        return res;
    }

    for (int it = 1; it <= params.max_iter; ++it) {
        kern::laplacian_apply(system.neighbors, p.data(), ap.data());
        const double pap = kern::dot(p, ap);
        check(pap > 0.0, Error::Kind::Convergence, "CG breakdown: non-positive curvature");
        const double alpha = rr / pap;
        kern::axpy(alpha, p.data(), res.x.data(), n);
        kern::axpy(-alpha, ap.data(), r.data(), n);

        if (it % kCheckpointEvery == 0) {
            // Replace the recursive residual by the true one to stop drift.
            kern::laplacian_apply(system.neighbors, res.x.data(), ap.data());
            for (size_t i = 0; i < n; ++i) r[i] = rhs[i] - ap[i];
            res.checkpoints.push_back(norm2(r) / b_norm);
        }

        const double rr_new = kern::dot(r, r);
        rel = std::sqrt(rr_new) / b_norm;
        if (rel <= params.rel_tol) {
            res.rel_residual = rel;
            res.iterations = it;
            return res;
        }
        const double beta = rr_new / rr;
        rr = rr_new;
        kern::xpay(r.data(), beta, p.data(), n);
    }

    throw ConvergenceError("CG did not reach rel_tol within max_iter iterations", rel,
                           params.max_iter);
}

std::array<CgResult, 3> solve_channels(const LaplacianSystem& system, const SolverParams& params) {
    std::array<CgResult, 3> out;
    for (int c = 0; c < 3; ++c) {
        out[c] = solve_cg(system, params, system.rhs[c], system.initial[c]);
    }
    return out;
}

RasterImage compose(const std::array<std::vector<double>, 3>& solution, const RasterImage& target,
                    const LaplacianSystem& system) {
    check(target.width == system.canvas_width && target.height == system.canvas_height,
          Error::Kind::DimensionMismatch, "target does not match assembled canvas dims");
    for (const auto& ch : solution) {
        check(ch.size() == system.neighbors.size(), Error::Kind::DimensionMismatch,
              "solution size does not match system unknowns");
    }
    RasterImage out = target;
    const auto& region = system.region;
    for (int ly = 0; ly < region.height; ++ly) {
        for (int lx = 0; lx < region.width; ++lx) {
            const int32_t idx = system.index_map[static_cast<size_t>(ly) * region.width + lx];
            if (idx < 0) continue;
            uint8_t* px = out.px(region.x + lx, region.y + ly);
            for (int c = 0; c < 3; ++c) {
                const double v = std::round(solution[c][idx]);  // half away from zero
                px[c] = static_cast<uint8_t>(std::min(255.0, std::max(0.0, v)));
            }
        }
    }
    return out;
}

}  // namespace cytoforge::poisson
