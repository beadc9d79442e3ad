#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cytoforge/image.hpp"

namespace cytoforge::tiler {

struct DepositParams {
    int morph_radius = 8;
    int min_component_area = 10000;
    double min_tissue_frac = 0.05;
};

// Binary deposit mask, same dimensions as the source raster.
struct TissueMask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> bits;

    TissueMask() = default;
    TissueMask(int w, int h) : width(w), height(h), bits(static_cast<size_t>(w) * h, 0) {}

    uint8_t at(int x, int y) const { return bits[static_cast<size_t>(y) * width + x]; }
    size_t count() const;
};

enum class SlideLabel { Negative = 0, Positive = 1, Unknown = 2 };

SlideLabel slide_label_from_string(const std::string& s);
const char* slide_label_to_string(SlideLabel l);

struct TileRecord {
    std::string slide_id;
    int grid_row = 0;
    int grid_col = 0;
    int origin_x = 0;
    int origin_y = 0;
    double tissue_frac = 0.0;
    std::string path;
};

struct SlideManifest {
    std::string slide_id;
    SlideLabel label = SlideLabel::Unknown;
    double microns_per_pixel = 0.50;
    std::vector<TileRecord> tiles;
};

// Otsu threshold over a 256-bin histogram: maximizes between-class variance,
// ties resolved to the smallest threshold. Foreground is bin > t.
int otsu_threshold(const std::vector<uint64_t>& hist);

// Saturation -> Otsu -> morphological close then open (disk) -> drop small
// connected components (8-connectivity).
TissueMask detect_cell_deposit(const RasterImage& image, const DepositParams& params);

// Full tiles only, grid anchored at (0,0), kept iff mask coverage >=
// min_tissue_frac, row-major order. slide_id/path left empty.
std::vector<TileRecord> extract_tiles(const RasterImage& image, const TissueMask& mask,
                                      int tile_px, double min_tissue_frac);

// Writes <out_dir>/tiles/<slide_id>/t_RRRR_CCCC.png per tile plus
// <out_dir>/<slide_id>.json, returns the manifest it wrote.
SlideManifest build_slide_manifest(const RasterImage& image, const std::string& slide_id,
                                   SlideLabel label, double microns_per_pixel, int tile_px,
                                   std::vector<TileRecord> tiles, const std::string& out_dir);

std::string manifest_to_json(const SlideManifest& m);
SlideManifest manifest_from_json(const std::string& text, const std::string& origin);
SlideManifest load_manifest(const std::string& path);

}  // namespace cytoforge::tiler
