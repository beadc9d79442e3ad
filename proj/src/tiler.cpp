#include "cytoforge/tiler.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "cytoforge/kernels.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace cytoforge::tiler {

size_t TissueMask::count() const {
    return static_cast<size_t>(std::accumulate(bits.begin(), bits.end(), uint64_t{0}));
}

SlideLabel slide_label_from_string(const std::string& s) {
    if (s == "positive" || s == "pos" || s == "1") return SlideLabel::Positive;
    if (s == "negative" || s == "neg" || s == "0") return SlideLabel::Negative;
    if (s == "unknown") return SlideLabel::Unknown;
    raise(Error::Kind::InvalidArgument, "unrecognized slide label '", s, "'");
}

const char* slide_label_to_string(SlideLabel l) {
    switch (l) {
        case SlideLabel::Negative: return "negative";
        case SlideLabel::Positive: return "positive";
        case SlideLabel::Unknown: return "unknown";
    }
    return "unknown";
}

int otsu_threshold(const std::vector<uint64_t>& hist) {
    check(hist.size() == 256, Error::Kind::InvalidArgument, "otsu expects a 256-bin histogram");
    const uint64_t total = std::accumulate(hist.begin(), hist.end(), uint64_t{0});
    check(total > 0, Error::Kind::InvalidArgument, "otsu on empty histogram");

    double sum_all = 0.0;
    for (int i = 0; i < 256; ++i) sum_all += static_cast<double>(i) * hist[i];

    int best_t = 0;
    double best_var = -1.0;
    double w0 = 0.0, sum0 = 0.0;
    for (int t = 0; t < 256; ++t) {
        w0 += static_cast<double>(hist[t]);
        if (w0 == 0.0) continue;
        const double w1 = static_cast<double>(total) - w0;
        if (w1 == 0.0) break;
        sum0 += static_cast<double>(t) * hist[t];
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }
    return best_t;
}

namespace {

// Drop 8-connected components smaller than min_area, in place.
void filter_small_components(std::vector<uint8_t>& mask, int w, int h, int min_area) {
    if (min_area <= 1) return;
    std::vector<int32_t> label(mask.size(), -1);
    std::vector<size_t> stack;
    std::vector<size_t> member;
    for (size_t start = 0; start < mask.size(); ++start) {
        if (!mask[start] || label[start] >= 0) continue;
        stack.clear();
        member.clear();
        stack.push_back(start);
        label[start] = 0;
        while (!stack.empty()) {
            const size_t p = stack.back();
            stack.pop_back();
            member.push_back(p);
            const int x = static_cast<int>(p % w);
            const int y = static_cast<int>(p / w);
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    const size_t q = static_cast<size_t>(ny) * w + nx;
                    if (mask[q] && label[q] < 0) {
                        label[q] = 0;
                        stack.push_back(q);
                    }
                }
            }
        }
        if (member.size() < static_cast<size_t>(min_area)) {
            for (size_t p : member) mask[p] = 0;
        }
    }
}

}  // namespace

TissueMask detect_cell_deposit(const RasterImage& image, const DepositParams& params) {
    check(params.morph_radius >= 0, Error::Kind::InvalidArgument, "morph_radius must be >= 0");
    check(params.min_tissue_frac >= 0.0 && params.min_tissue_frac <= 1.0,
          Error::Kind::InvalidArgument, "min_tissue_frac must be in [0,1]");

    const std::vector<uint8_t> sat = kern::saturation_map(image);

    std::vector<uint64_t> hist(256, 0);
    for (uint8_t s : sat) ++hist[s];
    const int t = otsu_threshold(hist);

    TissueMask mask(image.width, image.height);
    for (size_t i = 0; i < sat.size(); ++i) mask.bits[i] = sat[i] > t ? 1 : 0;

    if (params.morph_radius > 0) {
        const auto disk = kern::disk_offsets(params.morph_radius);
        // close
        mask.bits = kern::dilate(mask.bits, mask.width, mask.height, disk);
        mask.bits = kern::erode(mask.bits, mask.width, mask.height, disk);
        // open
        mask.bits = kern::erode(mask.bits, mask.width, mask.height, disk);
        mask.bits = kern::dilate(mask.bits, mask.width, mask.height, disk);
    }
    filter_small_components(mask.bits, mask.width, mask.height, params.min_component_area);
    return mask;
}

std::vector<TileRecord> extract_tiles(const RasterImage& image, const TissueMask& mask,
                                      int tile_px, double min_tissue_frac) {
    check(tile_px >= 1, Error::Kind::InvalidArgument, "tile_px must be >= 1");
    check(mask.width == image.width && mask.height == image.height,
          Error::Kind::DimensionMismatch, "mask ", mask.width, "x", mask.height,
          " does not match image ", image.width, "x", image.height);

    const int rows = image.height / tile_px;
    const int cols = image.width / tile_px;
    const double tile_area = static_cast<double>(tile_px) * tile_px;

    std::vector<TileRecord> out;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int x0 = c * tile_px;
            const int y0 = r * tile_px;
            uint64_t on = 0;
            for (int y = y0; y < y0 + tile_px; ++y) {
                const uint8_t* row = mask.bits.data() + static_cast<size_t>(y) * mask.width;
                for (int x = x0; x < x0 + tile_px; ++x) on += row[x];
            }
            const double frac = static_cast<double>(on) / tile_area;
            if (frac >= min_tissue_frac) {
                TileRecord rec;
                rec.grid_row = r;
                rec.grid_col = c;
                rec.origin_x = x0;
                rec.origin_y = y0;
                rec.tissue_frac = frac;
                out.push_back(std::move(rec));
            }
        }
    }
    return out;
}

namespace {

std::string tile_rel_path(const std::string& slide_id, int row, int col) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "t_%04d_%04d.png", row, col);
    return "tiles/" + slide_id + "/" + buf;
}

}  // namespace

SlideManifest build_slide_manifest(const RasterImage& image, const std::string& slide_id,
                                   SlideLabel label, double microns_per_pixel, int tile_px,
                                   std::vector<TileRecord> tiles, const std::string& out_dir) {
    check(!slide_id.empty(), Error::Kind::InvalidArgument, "slide_id must be non-empty");
    check(tile_px >= 1, Error::Kind::InvalidArgument, "tile_px must be >= 1");
    std::set<std::pair<int, int>> seen;
    for (const auto& t : tiles) {
        check(seen.insert({t.grid_row, t.grid_col}).second, Error::Kind::InvalidArgument,
              "duplicate tile grid position (", t.grid_row, ",", t.grid_col, ") for slide ",
              slide_id);
        check(t.origin_x >= 0 && t.origin_y >= 0 && t.origin_x + tile_px <= image.width &&
                  t.origin_y + tile_px <= image.height,
              Error::Kind::InvalidArgument, "tile (", t.grid_row, ",", t.grid_col,
              ") exceeds image bounds");
    }

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "tiles" / slide_id, ec);
    check(!ec, Error::Kind::Io, "cannot create output directory under ", out_dir, ": ",
          ec.message());

    SlideManifest m;
    m.slide_id = slide_id;
    m.label = label;
    m.microns_per_pixel = microns_per_pixel;
    m.tiles = std::move(tiles);
    for (auto& t : m.tiles) {
        t.slide_id = slide_id;
        t.path = tile_rel_path(slide_id, t.grid_row, t.grid_col);
        const RasterImage tile = crop(image, t.origin_x, t.origin_y, tile_px, tile_px);
        write_png((fs::path(out_dir) / t.path).string(), tile);
    }

    const fs::path manifest_path = fs::path(out_dir) / (slide_id + ".json");
    std::ofstream out(manifest_path, std::ios::binary);
    check(out.good(), Error::Kind::Io, "cannot write manifest ", manifest_path.string());
    out << manifest_to_json(m);
    out.close();
    check(out.good(), Error::Kind::Io, "error writing manifest ", manifest_path.string());
    return m;
}

std::string manifest_to_json(const SlideManifest& m) {
    ordered_json j;
    j["slide_id"] = m.slide_id;
    j["label"] = slide_label_to_string(m.label);
    j["mpp"] = m.microns_per_pixel;
    j["tiles"] = ordered_json::array();
    for (const auto& t : m.tiles) {
        ordered_json jt;
        jt["row"] = t.grid_row;
        jt["col"] = t.grid_col;
        jt["x"] = t.origin_x;
        jt["y"] = t.origin_y;
        jt["tissue_frac"] = t.tissue_frac;
        jt["path"] = t.path;
        j["tiles"].push_back(std::move(jt));
    }
    return j.dump(2) + "\n";
}

SlideManifest manifest_from_json(const std::string& text, const std::string& origin) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        raise(Error::Kind::Format, "invalid manifest JSON in ", origin, ": ", e.what());
    }
    SlideManifest m;
    try {
        m.slide_id = j.at("slide_id").get<std::string>();
        m.label = slide_label_from_string(j.at("label").get<std::string>());
        m.microns_per_pixel = j.at("mpp").get<double>();
        for (const auto& jt : j.at("tiles")) {
            TileRecord t;
            t.slide_id = m.slide_id;
            t.grid_row = jt.at("row").get<int>();
            t.grid_col = jt.at("col").get<int>();
            t.origin_x = jt.at("x").get<int>();
            t.origin_y = jt.at("y").get<int>();
            t.tissue_frac = jt.at("tissue_frac").get<double>();
            t.path = jt.at("path").get<std::string>();
            m.tiles.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        raise(Error::Kind::Format, "manifest field error in ", origin, ": ", e.what());
    }
    return m;
}

SlideManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), Error::Kind::Io, "cannot open manifest ", path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return manifest_from_json(text, path);
}

}  // namespace cytoforge::tiler
