#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace skipgraph {

/// 8-bit image, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const Image8& img);
Image8 read_png(const std::filesystem::path& path);

/// Binary PGM (P5), 8-bit.
void write_pgm(const std::filesystem::path& path, const Image8& img);
Image8 read_pgm(const std::filesystem::path& path);

/// [0, 1] -> round(255 v), clamped.
std::uint8_t to_byte(double v);

} // namespace skipgraph
