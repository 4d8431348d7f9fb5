#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fbsr {

/// Single-channel float raster, row-major, nominally in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, float fill = 0.0f);
    Image(int w, int h, std::vector<float> data);

    [[nodiscard]] std::size_t size() const { return pixels.size(); }
    [[nodiscard]] bool empty() const { return pixels.empty(); }

    float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    [[nodiscard]] Image crop(int x0, int y0, int w, int h) const;

    bool operator==(const Image&) const = default;
};

/// Per-pixel field-of-view flags (1 = inside). An empty mask means "everything".
struct FovMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> inside;

    [[nodiscard]] bool contains(int x, int y) const {
        return inside.empty() || inside[static_cast<std::size_t>(y) * width + x] != 0;
    }
};

/// Full square field of view.
FovMask full_fov(int width, int height);

/// Disc inscribed in the raster; a pixel is inside when its centre is.
FovMask circular_fov(int width, int height);

/// Zeroes every pixel outside the mask.
void apply_fov(Image& image, const FovMask& mask);

/// Affine rescale to [0,1]; constant images are returned unchanged.
Image rescale_unit(const Image& image);

/// Reads an 8- or 16-bit PNG (grey, grey+alpha, RGB or RGBA; colour is converted to
/// luma) and scales by the bit-depth maximum.
Image read_png(const std::filesystem::path& path);

/// Writes a grayscale PNG, clamping to [0,1]. bit_depth must be 8 or 16.
void write_png(const std::filesystem::path& path, const Image& image, int bit_depth = 16);

}  // namespace fbsr
