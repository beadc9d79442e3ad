#include "cytoforge/reference.hpp"

#include <cmath>

namespace cytoforge::ref {

std::vector<uint8_t> saturation_map(const RasterImage& img) {
    std::vector<uint8_t> sat(img.pixel_count());
    for (size_t i = 0; i < sat.size(); ++i) {
        const uint8_t r = img.pixels[i * 3];
        const uint8_t g = img.pixels[i * 3 + 1];
        const uint8_t b = img.pixels[i * 3 + 2];
        int mx = r, mn = r;
        if (g > mx) mx = g;
        if (b > mx) mx = b;
        if (g < mn) mn = g;
        if (b < mn) mn = b;
        sat[i] = mx == 0 ? 0 : static_cast<uint8_t>((255 * (mx - mn) + mx / 2) / mx);
    }
    return sat;
}

std::vector<uint8_t> dilate(const std::vector<uint8_t>& mask, int w, int h, int radius) {
    std::vector<uint8_t> out(mask.size(), 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            uint8_t v = 0;
            for (int dy = -radius; dy <= radius && !v; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dx * dx + dy * dy > radius * radius) continue;
                    const int sx = x + dx, sy = y + dy;
                    if (sx < 0 || sy < 0 || sx >= w || sy >= h) continue;
                    if (mask[static_cast<size_t>(sy) * w + sx]) {
                        v = 1;
                        break;
                    }
                }
            }
            out[static_cast<size_t>(y) * w + x] = v;
        }
    }
    return out;
}

std::vector<uint8_t> erode(const std::vector<uint8_t>& mask, int w, int h, int radius) {
    std::vector<uint8_t> out(mask.size(), 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            uint8_t v = 1;
            for (int dy = -radius; dy <= radius && v; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dx * dx + dy * dy > radius * radius) continue;
                    const int sx = x + dx, sy = y + dy;
                    if (sx < 0 || sy < 0 || sx >= w || sy >= h) continue;
                    if (!mask[static_cast<size_t>(sy) * w + sx]) {
                        v = 0;
                        break;
                    }
                }
            }
            out[static_cast<size_t>(y) * w + x] = v;
        }
    }
    return out;
}

double dot(const double* a, const double* b, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void laplacian_apply(const std::vector<std::array<int32_t, 4>>& neighbors, const double* x,
                     double* y) {
    for (size_t i = 0; i < neighbors.size(); ++i) {
        double v = 4.0 * x[i];
        for (int32_t nb : neighbors[i]) {
            if (nb >= 0) v -= x[nb];
        }
        y[i] = v;
    }
}

void linear_sigmoid_scores(const float* rows, size_t n, int dim, const double* w, double bias,
                           double* out) {
    for (size_t i = 0; i < n; ++i) {
        double logit = bias;
        for (int d = 0; d < dim; ++d) logit += w[d] * static_cast<double>(rows[i * dim + d]);
        out[i] = 1.0 / (1.0 + std::exp(-logit));
    }
}

}  // namespace cytoforge::ref
