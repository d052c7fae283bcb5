#include "skipgraph/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include "skipgraph/errors.hpp"

namespace skipgraph {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path.string());
    return f;
}

int color_type_for(std::size_t channels) {
    switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 3: return PNG_COLOR_TYPE_RGB;
    default: throw DimensionError("PNG: unsupported channel count " + std::to_string(channels));
    }
}

} // namespace

std::uint8_t to_byte(double v) {
    const double c = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<std::uint8_t>(c);
}

void write_png(const std::filesystem::path& path, const Image8& img) {
    if (img.pixels.size() != img.height * img.width * img.channels)
        throw DimensionError("PNG: pixel buffer does not match " + std::to_string(img.height) + "x" +
                             std::to_string(img.width) + "x" + std::to_string(img.channels));
    const int color = color_type_for(img.channels);
    auto f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("PNG: cannot create writer");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG: write failed for " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = img.width * img.channels;
    for (std::size_t y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image8 read_png(const std::filesystem::path& path) {
    auto f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("PNG: cannot create reader");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("PNG: read failed for " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    Image8 img;
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    img.pixels.resize(img.height * img.width * img.channels);
    const std::size_t stride = img.width * img.channels;
    for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * stride, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_pgm(const std::filesystem::path& path, const Image8& img) {
    if (img.channels != 1) throw DimensionError("PGM: single channel only");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string());
    os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw IoError("PGM: write failed for " + path.string());
}

Image8 read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::string magic;
    std::size_t maxval = 0;
    Image8 img;
    img.channels = 1;
    is >> magic >> img.width >> img.height >> maxval;
    if (magic != "P5" || maxval != 255 || img.width == 0 || img.height == 0)
        throw IoError("PGM: unsupported header in " + path.string());
    is.get();
    img.pixels.resize(img.width * img.height);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw IoError("PGM: truncated payload in " + path.string());
    return img;
}

} // namespace skipgraph
