#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cytoforge/error.hpp"

namespace cytoforge {

// 8-bit RGB pixel buffer, row-major, 3 bytes per pixel.
struct RasterImage {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;

    RasterImage() = default;
    RasterImage(int w, int h) : width(w), height(h) {
        check(w >= 1 && h >= 1, Error::Kind::InvalidArgument,
              "raster dimensions must be >= 1, got ", w, "x", h);
        pixels.assign(static_cast<size_t>(w) * h * 3, 0);
    }

    static RasterImage filled(int w, int h, uint8_t r, uint8_t g, uint8_t b) {
        RasterImage img(w, h);
        for (size_t i = 0; i < img.pixels.size(); i += 3) {
            img.pixels[i] = r;
            img.pixels[i + 1] = g;
            img.pixels[i + 2] = b;
        }
        return img;
    }

    size_t pixel_count() const { return static_cast<size_t>(width) * height; }

    uint8_t* px(int x, int y) { return pixels.data() + (static_cast<size_t>(y) * width + x) * 3; }
    const uint8_t* px(int x, int y) const {
        return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
    }

    uint8_t at(int x, int y, int c) const { return px(x, y)[c]; }
    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        uint8_t* p = px(x, y);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }

    bool same_dims(const RasterImage& o) const { return width == o.width && height == o.height; }
};

// Copy the w*h sub-rectangle at (x, y) into a new image.
RasterImage crop(const RasterImage& src, int x, int y, int w, int h);

// PNG (always) and baseline uncompressed RGB TIFF, dispatched on magic bytes.
RasterImage read_image(const std::string& path);
void write_png(const std::string& path, const RasterImage& img);

}  // namespace cytoforge
