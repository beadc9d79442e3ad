#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cytoforge/image.hpp"

// Plain serial re-implementations of the kernels in kernels.hpp. These are
// kept as the comparison baseline for the test suite and the benchmark; they
// share no code with the OpenMP versions.
namespace cytoforge::ref {

std::vector<uint8_t> saturation_map(const RasterImage& img);

std::vector<uint8_t> dilate(const std::vector<uint8_t>& mask, int w, int h, int radius);
std::vector<uint8_t> erode(const std::vector<uint8_t>& mask, int w, int h, int radius);

double dot(const double* a, const double* b, size_t n);

void laplacian_apply(const std::vector<std::array<int32_t, 4>>& neighbors, const double* x,
                     double* y);

void linear_sigmoid_scores(const float* rows, size_t n, int dim, const double* w, double bias,
                           double* out);

}  // namespace cytoforge::ref
