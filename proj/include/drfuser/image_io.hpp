#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace drfuser {

// 8-bit binary netpbm images: P5 (1 channel) or P6 (3 channels, interleaved).
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;  // row-major, channels interleaved
};

void write_netpbm(const std::filesystem::path& path, const Image8& image);
// Throws DataError naming the file on malformed headers or short pixel data.
Image8 read_netpbm(const std::filesystem::path& path);

}  // namespace drfuser
