#pragma once

// Grayscale PNG reading and writing on top of libpng. Samples are exposed as
// raw integer values (0..255 or 0..65535) so callers control the scaling.

#include <cstdint>
#include <string>
#include <vector>

namespace modfuser {

struct GrayImage {
    int width = 0;
    int height = 0;
    int bit_depth = 0;           // 8 or 16 after sub-byte depths are expanded
    std::vector<double> pixels;  // row-major raw sample values
};

GrayImage read_gray_png(const std::string& path);

void write_gray_png8(const std::string& path, int width, int height,
                     const std::vector<std::uint8_t>& pixels);
void write_gray_png16(const std::string& path, int width, int height,
                      const std::vector<std::uint16_t>& pixels);

}  // namespace modfuser
