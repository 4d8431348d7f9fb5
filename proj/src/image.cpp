#include "fbsr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include "fbsr/error.hpp"

namespace fbsr {

Image::Image(int w, int h, float fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

Image::Image(int w, int h, std::vector<float> data) : width(w), height(h), pixels(std::move(data)) {
    if (pixels.size() != static_cast<std::size_t>(w) * h) {
        throw ShapeError("image buffer length does not match width*height");
    }
}

Image Image::crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || x0 + w > width || y0 + h > height) {
        throw ShapeError("crop rectangle outside image");
    }
    Image out(w, h);
    for (int y = 0; y < h; ++y) {
        std::copy_n(&pixels[static_cast<std::size_t>(y0 + y) * width + x0], w,
                    &out.pixels[static_cast<std::size_t>(y) * w]);
    }
    return out;
}

FovMask full_fov(int width, int height) {
    return {width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 1)};
}

FovMask circular_fov(int width, int height) {
    FovMask mask{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0)};
    const double cx = width / 2.0;
    const double cy = height / 2.0;
    const double r = std::min(width, height) / 2.0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double dx = x + 0.5 - cx;
            const double dy = y + 0.5 - cy;
            mask.inside[static_cast<std::size_t>(y) * width + x] = (dx * dx + dy * dy <= r * r) ? 1 : 0;
        }
    }
    return mask;
}

void apply_fov(Image& image, const FovMask& mask) {
    if (mask.inside.empty()) return;
    if (mask.width != image.width || mask.height != image.height) {
        throw ShapeError("FOV mask size does not match image");
    }
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        if (!mask.inside[i]) image.pixels[i] = 0.0f;
    }
}

Image rescale_unit(const Image& image) {
    if (image.empty()) return image;
    const auto [lo, hi] = std::minmax_element(image.pixels.begin(), image.pixels.end());
    const double mn = *lo;
    const double range = static_cast<double>(*hi) - mn;
    if (!(range > 0.0)) return image;
    Image out = image;
    for (auto& p : out.pixels) p = static_cast<float>((p - mn) / range);
    return out;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(const std::filesystem::path& path, const char* what) {
    throw DataError("PNG " + path.string() + ": " + what);
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) png_fail(path, "cannot open");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) png_fail(path, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        png_fail(path, "png_create_info_struct failed");
    }
    // Everything libpng touches after setjmp must live outside this frame.
    std::vector<std::uint8_t> raw;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        png_fail(path, "decode error");
    }
    png_init_io(png, file.get());
    png_read_info(png, info);

    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (bit_depth == 16) png_set_swap(png);  // host little-endian order
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    const int depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    raw.resize(stride * height);
    rows.resize(height);
    for (int y = 0; y < height; ++y) rows[y] = raw.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const double maxval = depth == 16 ? 65535.0 : 255.0;
    Image out(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double c[3] = {0, 0, 0};
            for (int k = 0; k < std::min(channels, 3); ++k) {
                const std::size_t idx = static_cast<std::size_t>(x) * channels + k;
                if (depth == 16) {
                    std::uint16_t v;
                    std::memcpy(&v, rows[y] + 2 * idx, 2);
                    c[k] = v;
                } else {
                    c[k] = rows[y][idx];
                }
            }
            const double grey = channels >= 3 ? 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2] : c[0];
            out.at(x, y) = static_cast<float>(grey / maxval);
        }
    }
    return out;
}

void write_png(const std::filesystem::path& path, const Image& image, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw DataError("PNG bit depth must be 8 or 16");
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) png_fail(path, "cannot open for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) png_fail(path, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        png_fail(path, "png_create_info_struct failed");
    }
    const int bytes = bit_depth / 8;
    const std::size_t stride = static_cast<std::size_t>(image.width) * bytes;
    std::vector<std::uint8_t> raw(stride * image.height);
    const double maxval = bit_depth == 16 ? 65535.0 : 255.0;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double v = std::clamp(static_cast<double>(image.at(x, y)), 0.0, 1.0);
            const auto q = static_cast<std::uint32_t>(std::lround(v * maxval));
            std::uint8_t* dst = raw.data() + stride * y + static_cast<std::size_t>(x) * bytes;
            if (bit_depth == 16) {
                dst[0] = static_cast<std::uint8_t>(q >> 8);  // PNG is big-endian
                dst[1] = static_cast<std::uint8_t>(q & 0xff);
            } else {
                dst[0] = static_cast<std::uint8_t>(q);
            }
        }
    }
    std::vector<png_bytep> rows(image.height);
    for (int y = 0; y < image.height; ++y) rows[y] = raw.data() + stride * y;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        png_fail(path, "encode error");
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, image.width, image.height, bit_depth, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(file.get()) != 0) png_fail(path, "write failed");
}

}  // namespace fbsr
