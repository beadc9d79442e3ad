// Compares the OpenMP kernels against the serial reference implementations
// on representative workloads. Not a correctness gate; the test suite covers
// that. Build and run: ./cytoforge_bench [reps]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "cytoforge/kernels.hpp"
#include "cytoforge/poisson.hpp"
#include "cytoforge/reference.hpp"
#include "cytoforge/rng.hpp"

using namespace cytoforge;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double omp_ms) {
    std::printf("%-28s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx\n", name, serial_ms,
                omp_ms, serial_ms / omp_ms);
}

}  // namespace

int main(int argc, char** argv) {
    const int reps = argc > 1 ? std::atoi(argv[1]) : 5;
    std::printf("threads: %d, reps: %d\n\n", omp_get_max_threads(), reps);

    Rng rng(42);

    {  // saturation map on a 4096x4096 raster
        RasterImage img(4096, 4096);
        for (auto& b : img.pixels) b = static_cast<uint8_t>(rng.below(256));
        volatile uint8_t sink = 0;
        const double s = time_ms([&] { sink = ref::saturation_map(img)[0]; }, reps);
        const double o = time_ms([&] { sink = kern::saturation_map(img)[0]; }, reps);
        (void)sink;
        report("saturation 4096x4096", s, o);
    }

    {  // disk morphology on a 2048x2048 mask, radius 8
        const int w = 2048, h = 2048;
        std::vector<uint8_t> mask(static_cast<size_t>(w) * h);
        for (auto& b : mask) b = rng.below(100) < 30 ? 1 : 0;
        const auto disk = kern::disk_offsets(8);
        volatile uint8_t sink = 0;
        const double s = time_ms([&] { sink = ref::erode(mask, w, h, 8)[0]; }, reps);
        const double o = time_ms([&] { sink = kern::erode(mask, w, h, disk)[0]; }, reps);
        (void)sink;
        report("erode r8 2048x2048", s, o);
    }

    {  // dot product, 8M elements
        const size_t n = 8u << 20;
        std::vector<double> a(n), b(n);
        for (auto& v : a) v = rng.real01() - 0.5;
        for (auto& v : b) v = rng.real01() - 0.5;
        volatile double sink = 0;
        const double s = time_ms([&] { sink = ref::dot(a.data(), b.data(), n); }, reps);
        const double o = time_ms([&] { sink = kern::dot(a.data(), b.data(), n); }, reps);
        (void)sink;
        report("dot 8M", s, o);
    }

    {  // 5-point stencil apply on a 512x512 interior region
        poisson::PasteRegion region;
        region.x = 1;
        region.y = 1;
        region.width = 514;
        region.height = 514;
        RasterImage src(514, 514), dst(516, 516);
        for (auto& b : src.pixels) b = static_cast<uint8_t>(rng.below(256));
        for (auto& b : dst.pixels) b = static_cast<uint8_t>(rng.below(256));
        const auto sys = poisson::assemble_system(src, dst, region);
        std::vector<double> x(sys.n_unknowns), y(sys.n_unknowns);
        for (auto& v : x) v = rng.real01();
        volatile double sink = 0;
        const double s = time_ms(
            [&] {
                ref::laplacian_apply(sys.neighbors, x.data(), y.data());
                sink = y[0];
            },
            reps);
        const double o = time_ms(
            [&] {
                kern::laplacian_apply(sys.neighbors, x.data(), y.data());
                sink = y[0];
            },
            reps);
        (void)sink;
        report("laplacian apply 512x512", s, o);
    }

    {  // linear+sigmoid scores, 200k x 128
        const size_t n = 200000;
        const int dim = 128;
        std::vector<float> rows(n * dim);
        std::vector<double> w(dim);
        std::vector<double> out(n);
        for (auto& v : rows) v = static_cast<float>(rng.real01() - 0.5);
        for (auto& v : w) v = rng.real01() - 0.5;
        volatile double sink = 0;
        const double s = time_ms(
            [&] {
                ref::linear_sigmoid_scores(rows.data(), n, dim, w.data(), 0.1, out.data());
                sink = out[0];
            },
            reps);
        const double o = time_ms(
            [&] {
                kern::linear_sigmoid_scores(rows.data(), n, dim, w.data(), 0.1, out.data());
                sink = out[0];
            },
            reps);
        (void)sink;
        report("scores 200k x 128", s, o);
    }

    return 0;
}
