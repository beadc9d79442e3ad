#include "cytoforge/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace cytoforge::kern {

std::vector<uint8_t> saturation_map(const RasterImage& img) {
    const size_t n = img.pixel_count();
    std::vector<uint8_t> sat(n);
    const uint8_t* px = img.pixels.data();
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const uint8_t r = px[i * 3], g = px[i * 3 + 1], b = px[i * 3 + 2];
        const int mx = std::max({r, g, b});
        const int mn = std::min({r, g, b});
        sat[i] = mx == 0 ? 0 : static_cast<uint8_t>((255 * (mx - mn) + mx / 2) / mx);
    }
    return sat;
}

std::vector<std::array<int, 2>> disk_offsets(int radius) {
    std::vector<std::array<int, 2>> offs;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dx * dx + dy * dy <= radius * radius) offs.push_back({dx, dy});
        }
    }
    return offs;
}

std::vector<uint8_t> dilate(const std::vector<uint8_t>& mask, int w, int h,
                            const std::vector<std::array<int, 2>>& disk) {
    std::vector<uint8_t> out(mask.size(), 0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            uint8_t v = 0;
            for (const auto& d : disk) {
                const int sx = x + d[0], sy = y + d[1];
                if (sx < 0 || sy < 0 || sx >= w || sy >= h) continue;
                if (mask[static_cast<size_t>(sy) * w + sx]) {
                    v = 1;
                    break;
                }
            }
            out[static_cast<size_t>(y) * w + x] = v;
        }
    }
    return out;
}

std::vector<uint8_t> erode(const std::vector<uint8_t>& mask, int w, int h,
                           const std::vector<std::array<int, 2>>& disk) {
    std::vector<uint8_t> out(mask.size(), 0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            uint8_t v = 1;
            for (const auto& d : disk) {
                const int sx = x + d[0], sy = y + d[1];
                if (sx < 0 || sy < 0 || sx >= w || sy >= h) continue;  // outside = foreground
                if (!mask[static_cast<size_t>(sy) * w + sx]) {
                    v = 0;
                    break;
                }
            }
            out[static_cast<size_t>(y) * w + x] = v;
        }
    }
    return out;
}

namespace {
constexpr size_t kDotBlock = 4096;
}

double dot(const double* a, const double* b, size_t n) {
    if (n == 0) return 0.0;
    const size_t n_blocks = (n + kDotBlock - 1) / kDotBlock;
    if (n_blocks == 1) {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
        return s;
    }
    std::vector<double> partial(n_blocks, 0.0);
#pragma omp parallel for schedule(static)
    for (long long blk = 0; blk < static_cast<long long>(n_blocks); ++blk) {
        const size_t begin = static_cast<size_t>(blk) * kDotBlock;
        const size_t end = std::min(begin + kDotBlock, n);
        double s = 0.0;
        for (size_t i = begin; i < end; ++i) s += a[i] * b[i];
        partial[blk] = s;
    }
    double total = 0.0;
    for (double s : partial) total += s;  // fixed order, independent of threads
    return total;
}

// Spawning a parallel region costs more than scanning a few thousand
// elements; below this the kernels run their plain loop.
static constexpr size_t kParallelCutoff = 16384;

void axpy(double alpha, const double* x, double* y, size_t n) {
#pragma omp parallel for schedule(static) if (n >= kParallelCutoff)
    for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] += alpha * x[i];
}

void xpay(const double* x, double beta, double* y, size_t n) {
#pragma omp parallel for schedule(static) if (n >= kParallelCutoff)
    for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] = x[i] + beta * y[i];
}

void laplacian_apply(const std::vector<std::array<int32_t, 4>>& neighbors, const double* x,
                     double* y) {
    const long long n = static_cast<long long>(neighbors.size());
#pragma omp parallel for schedule(static) if (n >= static_cast<long long>(kParallelCutoff))
    for (long long i = 0; i < n; ++i) {
        double v = 4.0 * x[i];
        for (int32_t nb : neighbors[i]) {
            if (nb >= 0) v -= x[nb];
        }
        y[i] = v;
    }
}

void linear_sigmoid_scores(const float* rows, size_t n, int dim, const double* w, double bias,
                           double* out) {
    const size_t work = n * static_cast<size_t>(dim);
#pragma omp parallel for schedule(static) if (work >= kParallelCutoff)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const float* row = rows + static_cast<size_t>(i) * dim;
        double logit = bias;
        for (int d = 0; d < dim; ++d) logit += w[d] * static_cast<double>(row[d]);
        out[i] = 1.0 / (1.0 + std::exp(-logit));
    }
}

}  // namespace cytoforge::kern
