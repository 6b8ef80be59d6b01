#include "hiren/io/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "hiren/errors.hpp"

namespace hiren::io {

namespace {

struct FileCloser {
    std::FILE* f = nullptr;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace

void write_png(const std::filesystem::path& path, const nn::Tensor<float>& chw) {
    if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3))
        throw ShapeError("write_png expects (1|3,H,W), got " + chw.shape_string());
    int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);

    FileCloser fc{std::fopen(path.string().c_str(), "wb")};
    if (!fc.f) throw IoError("cannot open " + path.string() + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng failed while writing " + path.string());
    }
    png_init_io(png, fc.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<size_t>(w) * c);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j)
            for (int ch = 0; ch < c; ++ch) {
                float v = chw.at(ch, i, j);
                v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
                row[static_cast<size_t>(j) * c + ch] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

nn::Tensor<float> read_png(const std::filesystem::path& path) {
    FileCloser fc{std::fopen(path.string().c_str(), "rb")};
    if (!fc.f) throw IoError("cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng failed while reading " + path.string());
    }
    png_init_io(png, fc.f);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    // Normalize every variant to 8-bit gray or RGB.
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    int c = static_cast<int>(png_get_channels(png, info));
    if (c != 1 && c != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(path.string() + ": unsupported channel count " + std::to_string(c));
    }

    std::vector<unsigned char> raster(static_cast<size_t>(w) * h * c);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 i = 0; i < h; ++i) rows[i] = raster.data() + static_cast<size_t>(i) * w * c;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    nn::Tensor<float> out({c, static_cast<int>(h), static_cast<int>(w)});
    for (int ch = 0; ch < c; ++ch)
        for (png_uint_32 i = 0; i < h; ++i)
            for (png_uint_32 j = 0; j < w; ++j)
                out.at(ch, static_cast<int>(i), static_cast<int>(j)) =
                    raster[(static_cast<size_t>(i) * w + j) * c + ch] / 255.0f;
    return out;
}

}  // namespace hiren::io
