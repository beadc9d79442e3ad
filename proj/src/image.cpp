#include "cytoforge/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace cytoforge {

RasterImage crop(const RasterImage& src, int x, int y, int w, int h) {
    check(x >= 0 && y >= 0 && w >= 1 && h >= 1 && x + w <= src.width && y + h <= src.height,
          Error::Kind::InvalidArgument, "crop rectangle ", w, "x", h, "+", x, "+", y,
          " outside image ", src.width, "x", src.height);
    RasterImage out(w, h);
    for (int row = 0; row < h; ++row) {
        std::memcpy(out.px(0, row), src.px(x, y + row), static_cast<size_t>(w) * 3);
    }
    return out;
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

RasterImage read_png_file(const std::string& path, FILE* fp) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    check(png != nullptr, Error::Kind::Io, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        raise(Error::Kind::Io, "libpng info init failed");
    }
    std::vector<png_bytep> row_ptrs;
    RasterImage img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        raise(Error::Kind::Format, "invalid or corrupt PNG: ", path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    // Normalize every variant to 8-bit RGB.
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_strip_alpha(png);
    png_read_update_info(png, info);

    if (w < 1 || h < 1) {
        png_destroy_read_struct(&png, &info, nullptr);
        raise(Error::Kind::Format, "degenerate PNG dimensions in ", path);
    }
    img = RasterImage(static_cast<int>(w), static_cast<int>(h));
    row_ptrs.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = img.px(0, static_cast<int>(y));
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

// Baseline TIFF: uncompressed 8-bit RGB, chunky planar layout, strip-based.
// Anything else is rejected with a format error.
class TiffParser {
public:
    TiffParser(std::vector<uint8_t> bytes, std::string path)
        : bytes_(std::move(bytes)), path_(std::move(path)) {}

    RasterImage parse() {
        check(bytes_.size() >= 8, Error::Kind::Format, "truncated TIFF: ", path_);
        if (bytes_[0] == 'I' && bytes_[1] == 'I')
            little_endian_ = true;
        else if (bytes_[0] == 'M' && bytes_[1] == 'M')
            little_endian_ = false;
        else
            raise(Error::Kind::Format, "bad TIFF byte-order mark: ", path_);
        check(u16(2) == 42, Error::Kind::Format, "bad TIFF magic: ", path_);
        const uint32_t ifd = u32(4);
        return parse_ifd(ifd);
    }

private:
    uint16_t u16(size_t off) const {
        check(off + 2 <= bytes_.size(), Error::Kind::Format, "truncated TIFF: ", path_);
        return little_endian_ ? static_cast<uint16_t>(bytes_[off] | bytes_[off + 1] << 8)
                              : static_cast<uint16_t>(bytes_[off] << 8 | bytes_[off + 1]);
    }
    uint32_t u32(size_t off) const {
        check(off + 4 <= bytes_.size(), Error::Kind::Format, "truncated TIFF: ", path_);
        if (little_endian_)
            return bytes_[off] | bytes_[off + 1] << 8 | bytes_[off + 2] << 16 |
                   static_cast<uint32_t>(bytes_[off + 3]) << 24;
        return static_cast<uint32_t>(bytes_[off]) << 24 | bytes_[off + 1] << 16 |
               bytes_[off + 2] << 8 | bytes_[off + 3];
    }

    // Value of an inline or offset-stored entry as a vector of uint32.
    std::vector<uint32_t> entry_values(size_t entry_off) const {
        const uint16_t type = u16(entry_off + 2);
        const uint32_t count = u32(entry_off + 4);
        size_t elem = 0;
        switch (type) {
            case 1: elem = 1; break;  // BYTE
            case 3: elem = 2; break;  // SHORT
            case 4: elem = 4; break;  // LONG
            default:
                raise(Error::Kind::Format, "unsupported TIFF field type ", type, " in ", path_);
        }
        const size_t total = elem * count;
        const size_t data_off = total <= 4 ? entry_off + 8 : u32(entry_off + 8);
        std::vector<uint32_t> vals(count);
        for (uint32_t i = 0; i < count; ++i) {
            const size_t o = data_off + static_cast<size_t>(i) * elem;
            if (elem == 1) {
                check(o < bytes_.size(), Error::Kind::Format, "truncated TIFF: ", path_);
                vals[i] = bytes_[o];
            } else if (elem == 2) {
                vals[i] = u16(o);
            } else {
                vals[i] = u32(o);
            }
        }
        return vals;
    }

    RasterImage parse_ifd(uint32_t ifd) {
        const uint16_t n_entries = u16(ifd);
        uint32_t width = 0, height = 0, compression = 1, photometric = 2;
        uint32_t samples = 3, rows_per_strip = 0xFFFFFFFFu, planar = 1;
        std::vector<uint32_t> bits, strip_offsets, strip_counts;
        for (uint16_t i = 0; i < n_entries; ++i) {
            const size_t off = ifd + 2 + static_cast<size_t>(i) * 12;
            const uint16_t tag = u16(off);
            switch (tag) {
                case 256: width = entry_values(off)[0]; break;
                case 257: height = entry_values(off)[0]; break;
                case 258: bits = entry_values(off); break;
                case 259: compression = entry_values(off)[0]; break;
                case 262: photometric = entry_values(off)[0]; break;
                case 273: strip_offsets = entry_values(off); break;
                case 277: samples = entry_values(off)[0]; break;
                case 278: rows_per_strip = entry_values(off)[0]; break;
                case 279: strip_counts = entry_values(off); break;
                case 284: planar = entry_values(off)[0]; break;
                default: break;  // irrelevant tags ignored
            }
        }
        check(width >= 1 && height >= 1, Error::Kind::Format, "bad TIFF dimensions in ", path_);
        check(compression == 1, Error::Kind::Format,
              "only uncompressed TIFF is supported (compression=", compression, "): ", path_);
        check(photometric == 2, Error::Kind::Format, "only RGB TIFF is supported: ", path_);
        check(planar == 1, Error::Kind::Format, "only chunky planar TIFF is supported: ", path_);
        check(samples >= 3, Error::Kind::Format, "TIFF needs >= 3 samples per pixel: ", path_);
        for (uint32_t b : bits)
            check(b == 8, Error::Kind::Format, "only 8-bit TIFF is supported: ", path_);
        check(!strip_offsets.empty() && strip_offsets.size() == strip_counts.size(),
              Error::Kind::Format, "missing TIFF strip layout: ", path_);

        RasterImage img(static_cast<int>(width), static_cast<int>(height));
        const size_t row_bytes = static_cast<size_t>(width) * samples;
        uint32_t row = 0;
        for (size_t s = 0; s < strip_offsets.size() && row < height; ++s) {
            const size_t off = strip_offsets[s];
            const size_t count = strip_counts[s];
            check(off + count <= bytes_.size(), Error::Kind::Format, "truncated TIFF data: ",
                  path_);
            const uint32_t rows = std::min<uint32_t>(rows_per_strip, height - row);
            check(count >= row_bytes * rows, Error::Kind::Format, "short TIFF strip: ", path_);
            for (uint32_t r = 0; r < rows; ++r, ++row) {
                const uint8_t* src = bytes_.data() + off + static_cast<size_t>(r) * row_bytes;
                uint8_t* dst = img.px(0, static_cast<int>(row));
                for (uint32_t x = 0; x < width; ++x) {
                    dst[x * 3] = src[x * samples];
                    dst[x * 3 + 1] = src[x * samples + 1];
                    dst[x * 3 + 2] = src[x * samples + 2];
                }
            }
        }
        check(row == height, Error::Kind::Format, "TIFF strips do not cover image: ", path_);
        return img;
    }

    std::vector<uint8_t> bytes_;
    std::string path_;
    bool little_endian_ = true;
};

}  // namespace

RasterImage read_image(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    check(fp != nullptr, Error::Kind::Io, "cannot open ", path);
    uint8_t magic[8] = {0};
    const size_t got = std::fread(magic, 1, 8, fp.get());
    check(got >= 4, Error::Kind::Format, "file too short: ", path);

    static const uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (got == 8 && std::memcmp(magic, png_sig, 8) == 0) {
        std::rewind(fp.get());
        return read_png_file(path, fp.get());
    }
    if ((magic[0] == 'I' && magic[1] == 'I') || (magic[0] == 'M' && magic[1] == 'M')) {
        fp.reset();
        std::ifstream in(path, std::ios::binary);
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
        return TiffParser(std::move(bytes), path).parse();
    }
    raise(Error::Kind::Format, "unrecognized raster format (expect PNG or TIFF): ", path);
}

void write_png(const std::string& path, const RasterImage& img) {
    check(img.width >= 1 && img.height >= 1 &&
              img.pixels.size() == static_cast<size_t>(img.width) * img.height * 3,
          Error::Kind::InvalidArgument, "malformed raster buffer for ", path);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    check(fp != nullptr, Error::Kind::Io, "cannot write ", path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    check(png != nullptr, Error::Kind::Io, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        raise(Error::Kind::Io, "libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        raise(Error::Kind::Io, "PNG write failed: ", path);
    }
    png_init_io(png, fp.get());
    // Fixed settings so identical pixels produce identical bytes.
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_SUB);
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(img.px(0, y)));
    }
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

}  // namespace cytoforge
