#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fbsr/image.hpp"

namespace fbsr {

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

/// Vertex indices of one triangle, ascending.
using Triangle = std::array<int, 3>;

/// Pixels belonging to each fibre, in compressed-row form. A fibre whose Voronoi
/// cell contains no pixel centre is represented by the pixel under its centre.
struct CellIndex {
    std::vector<int> offsets;  // fibre_count + 1
    std::vector<int> pixels;

    [[nodiscard]] std::span<const int> cell(int fibre) const {
        return {pixels.data() + offsets[fibre], pixels.data() + offsets[fibre + 1]};
    }
};

/// Barycentric stencil of one pixel: up to three fibres with weights summing to 1.
struct PixelStencil {
    std::array<int, 3> fibre{-1, -1, -1};
    std::array<float, 3> weight{0.0f, 0.0f, 0.0f};
};

/// Fibre centres over a pixel grid with everything derived from them precomputed.
/// Immutable once built; construct through make_layout or generate_layout.
struct FibreLayout {
    int width = 0;
    int height = 0;
    std::vector<Point> positions;
    std::vector<int> cell_label;    // per pixel, row-major
    std::vector<int> cell_size;     // per fibre
    std::vector<Triangle> triangles;
    CellIndex cells;
    std::vector<PixelStencil> stencil;  // per pixel

    [[nodiscard]] int fibre_count() const { return static_cast<int>(positions.size()); }
};

/// Labels and cell sizes produced by label_voronoi.
struct VoronoiLabels {
    std::vector<int> label;
    std::vector<int> cell_size;
};

/// Assigns every pixel centre (x+0.5, y+0.5) to its nearest fibre; ties go to the
/// lowest fibre index.
VoronoiLabels label_voronoi(std::span<const Point> positions, int width, int height);

/// Delaunay triangulation. Each triple is ascending and the list is sorted.
/// Throws GeometryError for fewer than three points, duplicates or collinear input.
std::vector<Triangle> triangulate(std::span<const Point> positions);

/// Builds a layout from explicit fibre positions. Positions must be distinct and
/// inside [0,width)x[0,height). With fewer than three non-collinear fibres the
/// triangulation is left empty and interpolation degrades to nearest-fibre.
FibreLayout make_layout(std::vector<Point> positions, int width, int height);

/// Jittered hexagonal lattice with roughly width*height*density fibres. A density
/// of 1 places one fibre on every pixel centre. Deterministic given seed.
FibreLayout generate_layout(int width, int height, double target_density, double jitter,
                            std::uint64_t seed);

/// Fibres of `layout` falling inside the given rectangle, shifted to its origin.
FibreLayout crop_layout(const FibreLayout& layout, int x0, int y0, int w, int h);

/// Barycentric coordinates of p in triangle (a, b, c).
std::array<double, 3> barycentric(Point a, Point b, Point c, Point p);

/// Piecewise-linear interpolation of per-fibre values onto the pixel grid;
/// pixels outside the convex hull take the value of their Voronoi fibre.
Image interpolate(const FibreLayout& layout, std::span<const float> values);

/// Evaluates the same interpolant at an arbitrary point.
double interpolate_at(const FibreLayout& layout, std::span<const float> values, Point p);

/// Layout file: {"width": int, "height": int, "positions": [[x,y],...]}.
void save_layout(const std::filesystem::path& path, const FibreLayout& layout);
FibreLayout load_layout(const std::filesystem::path& path);

}  // namespace fbsr
