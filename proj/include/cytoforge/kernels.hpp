#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cytoforge/image.hpp"

// Hot data-parallel loops, OpenMP inside. Every kernel is bit-stable across
// thread counts: outputs are either computed per-element independently or
// reduced over a fixed block tree that does not depend on the schedule.
// Serial counterparts live in cytoforge::ref (reference.hpp).
namespace cytoforge::kern {

// HSV saturation quantized to [0,255]: s = 0 if max==0 else
// round(255*(max-min)/max), integer arithmetic, half rounded up.
std::vector<uint8_t> saturation_map(const RasterImage& img);

// Offsets (dx,dy) with dx^2+dy^2 <= radius^2.
std::vector<std::array<int, 2>> disk_offsets(int radius);

// Binary morphology on 0/1 masks. Out-of-bounds counts as background for
// dilation and as foreground for erosion, so a full mask is a fixed point.
std::vector<uint8_t> dilate(const std::vector<uint8_t>& mask, int w, int h,
                            const std::vector<std::array<int, 2>>& disk);
std::vector<uint8_t> erode(const std::vector<uint8_t>& mask, int w, int h,
                           const std::vector<std::array<int, 2>>& disk);

// Dot product with a fixed 4096-element block decomposition; block partial
// sums are computed in parallel and combined serially in block order.
double dot(const double* a, const double* b, size_t n);
inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, const double* x, double* y, size_t n);  // y += alpha*x
void xpay(const double* x, double beta, double* y, size_t n);   // y = x + beta*y

// y = A x for the 5-point Laplacian restricted to the unknown set:
// y_i = 4*x_i - sum of x over the (up to 4) neighbor unknowns.
// neighbors[i][j] is the neighbor's unknown index or -1.
void laplacian_apply(const std::vector<std::array<int32_t, 4>>& neighbors, const double* x,
                     double* y);

// Row scores: out_i = sigmoid(w . rows_i + bias), rows are n x dim floats.
void linear_sigmoid_scores(const float* rows, size_t n, int dim, const double* w, double bias,
                           double* out);

}  // namespace cytoforge::kern
