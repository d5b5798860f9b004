#include "modfuser/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "modfuser/binio.hpp"

namespace modfuser {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Failures surface as FormatError; libpng's own stderr chatter is silenced.
extern "C" void quiet_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
extern "C" void quiet_warning(png_structp, png_const_charp) {}

// Row storage lives on the heap so it stays valid across libpng's longjmp
// error path; only pointers established before setjmp are touched afterwards.
struct RowBuffer {
    std::vector<unsigned char> bytes;
    std::vector<png_bytep> rows;

    void allocate(std::size_t rowbytes, std::size_t height) {
        bytes.assign(rowbytes * height, 0);
        rows.resize(height);
        for (std::size_t y = 0; y < height; ++y) rows[y] = bytes.data() + y * rowbytes;
    }
};

}  // namespace

GrayImage read_gray_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw FormatError("cannot open PNG: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, quiet_error, quiet_warning);
    if (!png) throw FormatError("libpng allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw FormatError("libpng allocation failed");
    }
    const auto buf = std::make_unique<RowBuffer>();

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("failed to decode PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("expected grayscale PNG: " + path);
    }
    const std::size_t width = png_get_image_width(png, info);
    const std::size_t height = png_get_image_height(png, info);
    int depth = png_get_bit_depth(png, info);
    if (depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        depth = 8;
    }
    if (depth == 16) png_set_swap(png);  // file order is big-endian
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    buf->allocate(png_get_rowbytes(png, info), height);
    png_read_image(png, buf->rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    GrayImage img;
    img.width = static_cast<int>(width);
    img.height = static_cast<int>(height);
    img.bit_depth = depth;
    img.pixels.resize(width * height);
    if (depth == 8) {
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            img.pixels[i] = static_cast<double>(buf->bytes[i]);
    } else {
        const auto* samples = reinterpret_cast<const std::uint16_t*>(buf->bytes.data());
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            img.pixels[i] = static_cast<double>(samples[i]);
    }
    return img;
}

namespace {

template <class Sample>
void write_gray_png(const std::string& path, int width, int height,
                    const std::vector<Sample>& pixels, int depth) {
    if (width <= 0 || height <= 0)
        throw FormatError("PNG dimensions must be positive: " + path);
    if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
        throw FormatError("pixel count does not match dimensions: " + path);

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw FormatError("cannot open PNG for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, quiet_error, quiet_warning);
    if (!png) throw FormatError("libpng allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw FormatError("libpng allocation failed");
    }
    const auto rows = std::make_unique<std::vector<png_bytep>>(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
        auto* row = const_cast<Sample*>(pixels.data()) + static_cast<std::size_t>(y) * width;
        (*rows)[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(row);
    }

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("failed to write PNG: " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (depth == 16) png_set_swap(png);  // samples held little-endian in memory
    png_write_image(png, rows->data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_gray_png8(const std::string& path, int width, int height,
                     const std::vector<std::uint8_t>& pixels) {
    write_gray_png(path, width, height, pixels, 8);
}

void write_gray_png16(const std::string& path, int width, int height,
                      const std::vector<std::uint16_t>& pixels) {
    write_gray_png(path, width, height, pixels, 16);
}

}  // namespace modfuser
