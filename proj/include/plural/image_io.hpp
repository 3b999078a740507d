#pragma once

// Binary NetPBM (P5 grey, P6 RGB, maxval 255) reading and writing.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace plural {

struct RawImage {
    int width = 0;
    int height = 0;
    int channels = 0;                 // 1 for PGM, 3 for PPM
    std::vector<std::uint8_t> bytes;  // interleaved, row-major
};

// Throws std::runtime_error on malformed headers, unsupported maxval, or short data.
RawImage read_netpbm(const std::filesystem::path& path);
RawImage parse_netpbm(const std::string& contents);
std::string encode_netpbm(const RawImage& image);
void write_netpbm(const std::filesystem::path& path, const RawImage& image);

}  // namespace plural
