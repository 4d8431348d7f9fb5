#include "fbsr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <unordered_map>

#include <json.hpp>

#include "fbsr/error.hpp"

namespace fbsr {

namespace {

double dist2(Point a, double x, double y) {
    const double dx = x - a.x;
    const double dy = y - a.y;
    return dx * dx + dy * dy;
}

// Sign of the signed area of (a, b, c); positive for counter-clockwise.
long double orient(Point a, Point b, Point c) {
    const long double abx = static_cast<long double>(b.x) - a.x;
    const long double aby = static_cast<long double>(b.y) - a.y;
    const long double acx = static_cast<long double>(c.x) - a.x;
    const long double acy = static_cast<long double>(c.y) - a.y;
    return abx * acy - aby * acx;
}

// Positive when d lies strictly inside the circumcircle of the CCW triangle (a, b, c).
long double incircle(Point a, Point b, Point c, Point d) {
    const long double adx = static_cast<long double>(a.x) - d.x;
    const long double ady = static_cast<long double>(a.y) - d.y;
    const long double bdx = static_cast<long double>(b.x) - d.x;
    const long double bdy = static_cast<long double>(b.y) - d.y;
    const long double cdx = static_cast<long double>(c.x) - d.x;
    const long double cdy = static_cast<long double>(c.y) - d.y;
    const long double ad = adx * adx + ady * ady;
    const long double bd = bdx * bdx + bdy * bdy;
    const long double cd = cdx * cdx + cdy * cdy;
    return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

void check_positions(std::span<const Point> positions) {
    std::vector<Point> sorted(positions.begin(), positions.end());
    std::sort(sorted.begin(), sorted.end(),
              [](Point a, Point b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw GeometryError("fibre positions must be pairwise distinct");
    }
}

// Incremental Bowyer-Watson with a symbolic vertex at infinity: hull edges are
// closed by "ghost" triangles (a, b, kGhost) so that no super-triangle is needed.
class DelaunayBuilder {
public:
    static constexpr int kGhost = -1;

    explicit DelaunayBuilder(std::span<const Point> pts) : pts_(pts) {}

    std::vector<Triangle> run() {
        const int n = static_cast<int>(pts_.size());
        if (n < 3) throw GeometryError("triangulation needs at least 3 points");
        check_positions(pts_);

        std::vector<int> order = insertion_order();
        const int a = order[0];
        const int b = order[1];
        int k = -1;
        for (int i = 2; i < n; ++i) {
            if (orient(pts_[a], pts_[b], pts_[order[i]]) != 0) {
                k = i;
                break;
            }
        }
        if (k < 0) throw GeometryError("triangulation input is collinear");
        const int c = order[k];
        order.erase(order.begin() + k);

        seed_triangle(a, b, c);
        for (std::size_t i = 2; i < order.size(); ++i) insert(order[i]);

        std::vector<Triangle> out;
        for (const auto& t : tris_) {
            if (!t.alive || is_ghost(t)) continue;
            Triangle tri{t.v[0], t.v[1], t.v[2]};
            std::sort(tri.begin(), tri.end());
            out.push_back(tri);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    struct Tri {
        std::array<int, 3> v{};
        std::array<int, 3> n{-1, -1, -1};  // n[i] lies across the edge opposite v[i]
        bool alive = true;
    };

    static bool is_ghost(const Tri& t) { return t.v[2] == kGhost; }

    // Canonical, input-order independent insertion sequence: boustrophedon rows.
    std::vector<int> insertion_order() const {
        double xmin = pts_[0].x, xmax = xmin, ymin = pts_[0].y, ymax = ymin;
        for (const auto& p : pts_) {
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
        const double rows = std::max(1.0, std::sqrt(static_cast<double>(pts_.size())));
        const double band = std::max((ymax - ymin) / rows, 1e-12);
        std::vector<int> order(pts_.size());
        std::iota(order.begin(), order.end(), 0);
        auto key = [&](int i) {
            const auto row = static_cast<long>(std::floor((pts_[i].y - ymin) / band));
            const double x = (row % 2 == 0) ? pts_[i].x : -pts_[i].x;
            return std::tuple{row, x, pts_[i].y};
        };
        std::sort(order.begin(), order.end(), [&](int i, int j) { return key(i) < key(j); });
        return order;
    }

    void seed_triangle(int a, int b, int c) {
        if (orient(pts_[a], pts_[b], pts_[c]) < 0) std::swap(b, c);
        std::vector<Tri> fresh(4);
        fresh[0].v = {a, b, c};
        fresh[1].v = {c, b, kGhost};
        fresh[2].v = {a, c, kGhost};
        fresh[3].v = {b, a, kGhost};
        tris_ = fresh;
        std::vector<int> ids{0, 1, 2, 3};
        link_by_edges(ids);
        last_real_ = 0;
    }

    void link_by_edges(const std::vector<int>& ids) {
        std::unordered_map<std::int64_t, std::pair<int, int>> edges;
        auto key = [](int u, int w) {
            return (static_cast<std::int64_t>(u) << 32) ^ static_cast<std::uint32_t>(w);
        };
        for (int id : ids) {
            for (int i = 0; i < 3; ++i) {
                edges[key(tris_[id].v[(i + 1) % 3], tris_[id].v[(i + 2) % 3])] = {id, i};
            }
        }
        for (int id : ids) {
            for (int i = 0; i < 3; ++i) {
                const auto it = edges.find(key(tris_[id].v[(i + 2) % 3], tris_[id].v[(i + 1) % 3]));
                if (it != edges.end()) tris_[id].n[i] = it->second.first;
            }
        }
    }

    bool in_conflict(const Tri& t, Point p) const {
        if (!is_ghost(t)) {
            return incircle(pts_[t.v[0]], pts_[t.v[1]], pts_[t.v[2]], p) > 0;
        }
        const Point a = pts_[t.v[0]];
        const Point b = pts_[t.v[1]];
        const long double o = orient(a, b, p);
        if (o > 0) return true;
        if (o < 0) return false;
        // Collinear with the hull edge: conflicting only strictly inside the segment.
        const double dot = (p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y);
        const double len2 = (b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y);
        return dot > 0 && dot < len2;
    }

    int locate(Point p) {
        int t = last_real_;
        std::size_t guard = 0;
        const std::size_t limit = 4 * tris_.size() + 16;
        while (true) {
            const Tri& tri = tris_[t];
            if (is_ghost(tri)) return t;
            bool moved = false;
            walk_state_ = walk_state_ * 6364136223846793005ULL + 1442695040888963407ULL;
            const int start = static_cast<int>((walk_state_ >> 33) % 3);
            for (int s = 0; s < 3; ++s) {
                const int i = (start + s) % 3;
                const Point u = pts_[tri.v[(i + 1) % 3]];
                const Point w = pts_[tri.v[(i + 2) % 3]];
                if (orient(u, w, p) < 0) {
                    t = tri.n[i];
                    moved = true;
                    break;
                }
            }
            if (!moved) return t;
            if (++guard > limit) break;
        }
        // Walk failed to terminate; fall back to an exhaustive scan.
        for (int i = 0; i < static_cast<int>(tris_.size()); ++i) {
            if (tris_[i].alive && in_conflict(tris_[i], p)) return i;
        }
        throw GeometryError("point location failed");
    }

    void insert(int pi) {
        const Point p = pts_[pi];
        const int start = locate(p);
        if (!in_conflict(tris_[start], p)) throw GeometryError("point location returned a non-conflicting triangle");

        ++stamp_;
        if (mark_.size() < tris_.size()) mark_.resize(tris_.size() * 2, 0);
        std::vector<int> cavity{start};
        mark_[start] = stamp_;
        struct Boundary {
            int u, w, outside;
        };
        std::vector<Boundary> boundary;
        for (std::size_t k = 0; k < cavity.size(); ++k) {
            const int t = cavity[k];
            for (int i = 0; i < 3; ++i) {
                const int nb = tris_[t].n[i];
                if (mark_[nb] == stamp_) continue;
                if (in_conflict(tris_[nb], p)) {
                    mark_[nb] = stamp_;
                    cavity.push_back(nb);
                } else {
                    boundary.push_back({tris_[t].v[(i + 1) % 3], tris_[t].v[(i + 2) % 3], nb});
                }
            }
        }
        for (int t : cavity) tris_[t].alive = false;

        // New fan (u, w, p) around p; remember fan members by their first vertex.
        std::unordered_map<int, int> by_start;
        std::vector<int> created;
        created.reserve(boundary.size());
        for (const auto& e : boundary) {
            Tri t;
            t.v = {e.u, e.w, pi};
            t.n[2] = e.outside;
            const int id = static_cast<int>(tris_.size());
            tris_.push_back(t);
            created.push_back(id);
            by_start[e.u] = id;
            Tri& out = tris_[e.outside];
            for (int i = 0; i < 3; ++i) {
                if (out.v[(i + 1) % 3] == e.w && out.v[(i + 2) % 3] == e.u) out.n[i] = id;
            }
        }
        for (int id : created) {
            Tri& t = tris_[id];
            t.n[0] = by_start.at(t.v[1]);  // edge (w, p)
            // Edge (p, u): the fan member whose second vertex is u.
            for (int other : created) {
                if (tris_[other].v[1] == t.v[0]) {
                    t.n[1] = other;
                    break;
                }
            }
        }
        for (int id : created) {
            Tri& t = tris_[id];
            // Rotate ghosts so the infinite vertex sits at index 2.
            while (t.v[2] != kGhost && (t.v[0] == kGhost || t.v[1] == kGhost)) {
                std::rotate(t.v.begin(), t.v.begin() + 1, t.v.end());
                std::rotate(t.n.begin(), t.n.begin() + 1, t.n.end());
            }
            if (!is_ghost(t)) last_real_ = id;
        }
        if (mark_.size() < tris_.size()) mark_.resize(tris_.size() * 2, 0);
    }

    std::span<const Point> pts_;
    std::vector<Tri> tris_;
    std::vector<unsigned> mark_;
    unsigned stamp_ = 0;
    int last_real_ = 0;
    std::uint64_t walk_state_ = 0x9e3779b97f4a7c15ULL;
};

CellIndex build_cells(const std::vector<Point>& positions, const VoronoiLabels& labels, int width) {
    const int n = static_cast<int>(positions.size());
    CellIndex cells;
    cells.offsets.assign(n + 1, 0);
    for (int f = 0; f < n; ++f) cells.offsets[f + 1] = cells.offsets[f] + std::max(labels.cell_size[f], 1);
    cells.pixels.resize(cells.offsets[n]);
    std::vector<int> cursor(cells.offsets.begin(), cells.offsets.end() - 1);
    for (std::size_t p = 0; p < labels.label.size(); ++p) {
        cells.pixels[cursor[labels.label[p]]++] = static_cast<int>(p);
    }
    for (int f = 0; f < n; ++f) {
        if (labels.cell_size[f] == 0) {
            const int x = static_cast<int>(positions[f].x);
            const int y = static_cast<int>(positions[f].y);
            cells.pixels[cells.offsets[f]] = y * width + x;
        }
    }
    return cells;
}

std::vector<PixelStencil> build_stencil(const FibreLayout& layout) {
    const int w = layout.width;
    const int h = layout.height;
    std::vector<PixelStencil> stencil(static_cast<std::size_t>(w) * h);
    std::vector<std::uint8_t> covered(stencil.size(), 0);
    for (const auto& tri : layout.triangles) {
        const Point a = layout.positions[tri[0]];
        const Point b = layout.positions[tri[1]];
        const Point c = layout.positions[tri[2]];
        const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x, b.x, c.x}) - 0.5)));
        const int x1 = std::min(w - 1, static_cast<int>(std::floor(std::max({a.x, b.x, c.x}) - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y, b.y, c.y}) - 0.5)));
        const int y1 = std::min(h - 1, static_cast<int>(std::floor(std::max({a.y, b.y, c.y}) - 0.5)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const std::size_t idx = static_cast<std::size_t>(y) * w + x;
                if (covered[idx]) continue;
                auto bc = barycentric(a, b, c, {x + 0.5, y + 0.5});
                constexpr double tol = -1e-9;
                if (bc[0] < tol || bc[1] < tol || bc[2] < tol) continue;
                double sum = 0.0;
                for (auto& v : bc) {
                    v = std::max(v, 0.0);
                    sum += v;
                }
                for (int k = 0; k < 3; ++k) {
                    stencil[idx].fibre[k] = tri[k];
                    stencil[idx].weight[k] = static_cast<float>(bc[k] / sum);
                }
                covered[idx] = 1;
            }
        }
    }
    for (std::size_t idx = 0; idx < stencil.size(); ++idx) {
        if (!covered[idx]) {
            stencil[idx].fibre = {layout.cell_label[idx], -1, -1};
            stencil[idx].weight = {1.0f, 0.0f, 0.0f};
        }
    }
    return stencil;
}

}  // namespace

VoronoiLabels label_voronoi(std::span<const Point> positions, int width, int height) {
    if (positions.empty()) throw GeometryError("Voronoi labelling needs at least one fibre");
    if (width <= 0 || height <= 0) throw ShapeError("grid dimensions must be positive");
    const int n = static_cast<int>(positions.size());

    // Uniform bucket grid sized for about one fibre per bucket.
    const double bucket = std::max(1.0, std::sqrt(static_cast<double>(width) * height / n));
    const int bw = static_cast<int>(std::ceil(width / bucket)) + 1;
    const int bh = static_cast<int>(std::ceil(height / bucket)) + 1;
    std::vector<std::vector<int>> buckets(static_cast<std::size_t>(bw) * bh);
    auto bucket_of = [&](double v, int limit) {
        return std::clamp(static_cast<int>(std::floor(v / bucket)), 0, limit - 1);
    };
    for (int f = 0; f < n; ++f) {
        const Point p = positions[f];
        if (!(p.x >= 0 && p.x < width && p.y >= 0 && p.y < height)) {
            throw GeometryError("fibre position outside the grid");
        }
        buckets[static_cast<std::size_t>(bucket_of(p.y, bh)) * bw + bucket_of(p.x, bw)].push_back(f);
    }

    VoronoiLabels out;
    out.label.resize(static_cast<std::size_t>(width) * height);
    out.cell_size.assign(n, 0);
    const int max_ring = std::max(bw, bh);
    for (int y = 0; y < height; ++y) {
        const double cy = y + 0.5;
        const int by = bucket_of(cy, bh);
        for (int x = 0; x < width; ++x) {
            const double cx = x + 0.5;
            const int bx = bucket_of(cx, bw);
            double best = std::numeric_limits<double>::infinity();
            int best_f = -1;
            for (int r = 0; r <= max_ring; ++r) {
                for (int j = by - r; j <= by + r; ++j) {
                    if (j < 0 || j >= bh) continue;
                    const bool edge_row = (j == by - r || j == by + r);
                    for (int i = bx - r; i <= bx + r; i += (edge_row ? 1 : 2 * r)) {
                        if (i >= 0 && i < bw) {
                            for (int f : buckets[static_cast<std::size_t>(j) * bw + i]) {
                                const double d = dist2(positions[f], cx, cy);
                                if (d < best || (d == best && f < best_f)) {
                                    best = d;
                                    best_f = f;
                                }
                            }
                        }
                        if (r == 0) break;
                    }
                }
                // Anything beyond ring r is at least r*bucket away from the pixel centre.
                const double reach = r * bucket;
                if (best_f >= 0 && reach * reach > best) break;
            }
            out.label[static_cast<std::size_t>(y) * width + x] = best_f;
            ++out.cell_size[best_f];
        }
    }
    return out;
}

std::vector<Triangle> triangulate(std::span<const Point> positions) {
    return DelaunayBuilder(positions).run();
}

std::array<double, 3> barycentric(Point a, Point b, Point c, Point p) {
    const double den = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
    if (den == 0.0) throw GeometryError("degenerate triangle");
    const double l0 = ((b.y - c.y) * (p.x - c.x) + (c.x - b.x) * (p.y - c.y)) / den;
    const double l1 = ((c.y - a.y) * (p.x - c.x) + (a.x - c.x) * (p.y - c.y)) / den;
    return {l0, l1, 1.0 - l0 - l1};
}

FibreLayout make_layout(std::vector<Point> positions, int width, int height) {
    if (width <= 0 || height <= 0) throw ShapeError("layout dimensions must be positive");
    if (positions.empty()) throw GeometryError("layout needs at least one fibre");
    check_positions(positions);

    FibreLayout layout;
    layout.width = width;
    layout.height = height;
    layout.positions = std::move(positions);
    auto labels = label_voronoi(layout.positions, width, height);
    layout.cells = build_cells(layout.positions, labels, width);
    layout.cell_label = std::move(labels.label);
    layout.cell_size = std::move(labels.cell_size);
    if (layout.positions.size() >= 3) {
        try {
            layout.triangles = triangulate(layout.positions);
        } catch (const GeometryError&) {
            layout.triangles.clear();  // collinear: nearest-fibre fallback everywhere
        }
    }
    layout.stencil = build_stencil(layout);
    return layout;
}

FibreLayout generate_layout(int width, int height, double target_density, double jitter,
                            std::uint64_t seed) {
    if (width < 8 || height < 8) throw ShapeError("layout grid must be at least 8x8");
    if (!(target_density > 0.0 && target_density <= 1.0)) {
        throw ConfigError("fibre density must lie in (0, 1]");
    }
    if (!(jitter >= 0.0 && jitter <= 0.5)) throw ConfigError("jitter must lie in [0, 0.5]");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<Point> lattice;
    double pitch = 1.0;
    if (target_density >= 1.0) {
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) lattice.push_back({x + 0.5, y + 0.5});
        }
    } else {
        pitch = std::sqrt(2.0 / (std::sqrt(3.0) * target_density));
        const double row = pitch * std::sqrt(3.0) / 2.0;
        for (int j = 0;; ++j) {
            const double y = row / 2.0 + j * row;
            if (y >= height) break;
            for (double x = (j % 2 == 0 ? 0.25 : 0.75) * pitch; x < width; x += pitch) {
                lattice.push_back({x, y});
            }
        }
    }

    std::vector<Point> positions;
    positions.reserve(lattice.size());
    const double amp = jitter * pitch;
    for (const Point& base : lattice) {
        Point p = base;
        if (amp > 0.0) {
            p.x += amp * unit(rng);
            p.y += amp * unit(rng);
        }
        if (p.x >= 0 && p.x < width && p.y >= 0 && p.y < height) positions.push_back(p);
    }
    // Exact coincidences are measure-zero under jitter; drop any that occur.
    std::vector<std::size_t> idx(positions.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return positions[a].x < positions[b].x ||
               (positions[a].x == positions[b].x && positions[a].y < positions[b].y);
    });
    std::vector<std::uint8_t> keep(positions.size(), 1);
    for (std::size_t k = 1; k < idx.size(); ++k) {
        if (positions[idx[k]] == positions[idx[k - 1]]) keep[idx[k]] = 0;
    }
    std::vector<Point> distinct;
    for (std::size_t k = 0; k < positions.size(); ++k) {
        if (keep[k]) distinct.push_back(positions[k]);
    }
    if (distinct.size() < 3) throw GeometryError("layout has fewer than 3 fibres");
    auto layout = make_layout(std::move(distinct), width, height);
    if (layout.triangles.empty()) throw GeometryError("layout fibres are collinear");
    return layout;
}

FibreLayout crop_layout(const FibreLayout& layout, int x0, int y0, int w, int h) {
    std::vector<Point> inside;
    for (const Point& p : layout.positions) {
        if (p.x >= x0 && p.x < x0 + w && p.y >= y0 && p.y < y0 + h) inside.push_back({p.x - x0, p.y - y0});
    }
    if (inside.empty()) throw GeometryError("crop window contains no fibre");
    return make_layout(std::move(inside), w, h);
}

Image interpolate(const FibreLayout& layout, std::span<const float> values) {
    if (values.size() != layout.positions.size()) {
        throw ShapeError("interpolate: " + std::to_string(values.size()) + " values for " +
                         std::to_string(layout.positions.size()) + " fibres");
    }
    Image out(layout.width, layout.height);
    for (std::size_t i = 0; i < layout.stencil.size(); ++i) {
        const auto& s = layout.stencil[i];
        double v = 0.0;
        for (int k = 0; k < 3; ++k) {
            if (s.fibre[k] >= 0) v += static_cast<double>(s.weight[k]) * values[s.fibre[k]];
        }
        out.pixels[i] = static_cast<float>(v);
    }
    return out;
}

double interpolate_at(const FibreLayout& layout, std::span<const float> values, Point p) {
    if (values.size() != layout.positions.size()) throw ShapeError("interpolate_at: length mismatch");
    for (const auto& tri : layout.triangles) {
        const auto bc = barycentric(layout.positions[tri[0]], layout.positions[tri[1]],
                                    layout.positions[tri[2]], p);
        if (bc[0] >= -1e-12 && bc[1] >= -1e-12 && bc[2] >= -1e-12) {
            return bc[0] * values[tri[0]] + bc[1] * values[tri[1]] + bc[2] * values[tri[2]];
        }
    }
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int f = 0; f < layout.fibre_count(); ++f) {
        const double d = dist2(layout.positions[f], p.x, p.y);
        if (d < best_d) {
            best_d = d;
            best = f;
        }
    }
    return values[best];
}

void save_layout(const std::filesystem::path& path, const FibreLayout& layout) {
    nlohmann::json j;
    j["width"] = layout.width;
    j["height"] = layout.height;
    auto& pos = j["positions"] = nlohmann::json::array();
    for (const auto& p : layout.positions) pos.push_back({p.x, p.y});
    std::ofstream out(path);
    if (!out) throw DataError("cannot write layout file " + path.string());
    out << j.dump() << '\n';
    if (!out) throw DataError("failed writing layout file " + path.string());
}

FibreLayout load_layout(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open layout file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        std::vector<Point> positions;
        for (const auto& p : j.at("positions")) positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        return make_layout(std::move(positions), j.at("width").get<int>(), j.at("height").get<int>());
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed layout file " + path.string() + ": " + e.what());
    }
}

}  // namespace fbsr
