#pragma once

// Thin PNG/JPEG codec wrapper (OpenCV imgcodecs behind it). Resizing and
// normalization happen in the tensor pipeline, not here.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fseg {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RawImage {
    size_t height = 0, width = 0, channels = 0;  // channels: 1 or 3 (RGB order)
    std::vector<uint8_t> pixels;                 // row-major, interleaved
};

RawImage read_image(const std::string& path);

// 8-bit single-channel PNG.
void write_gray_png(const std::string& path, size_t height, size_t width,
                    const std::vector<uint8_t>& pixels);

// 8-bit RGB PNG; pixels interleaved RGB.
void write_rgb_png(const std::string& path, size_t height, size_t width,
                   const std::vector<uint8_t>& pixels);

}  // namespace fseg
