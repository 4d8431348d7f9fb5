#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "fbsr/error.hpp"
#include "fbsr/geometry.hpp"
#include "oracles.hpp"

using namespace fbsr;

TEST_CASE("voronoi labels match exhaustive nearest neighbour") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int w = 8 + static_cast<int>(rng() % 25), h = 8 + static_cast<int>(rng() % 25);
        const auto pts = oracle::random_points(3 + static_cast<int>(rng() % 40), w, h, rng);
        const auto labels = label_voronoi(pts, w, h);
        CHECK(labels.label == oracle::voronoi_labels(pts, w, h));
        CHECK(std::accumulate(labels.cell_size.begin(), labels.cell_size.end(), 0) == w * h);
    }
}

TEST_CASE("voronoi ties go to the lowest fibre index") {
    // Both fibres are equidistant from the centre of pixel (1,1).
    const std::vector<Point> pts{{2.5, 1.5}, {0.5, 1.5}};
    const auto labels = label_voronoi(pts, 4, 4);
    CHECK(labels.label[1 * 4 + 1] == 0);
}

TEST_CASE("delaunay triangles have empty circumcircles") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto pts = oracle::random_points(4 + static_cast<int>(rng() % 60), 32, 32, rng);
        const auto tris = triangulate(pts);
        REQUIRE(!tris.empty());
        CHECK(std::is_sorted(tris.begin(), tris.end()));
        for (const auto& t : tris) {
            CHECK(t[0] < t[1]);
            CHECK(t[1] < t[2]);
            for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
                if (i == t[0] || i == t[1] || i == t[2]) continue;
                CHECK(oracle::incircle(pts[t[0]], pts[t[1]], pts[t[2]], pts[i]) <= 1e-9);
            }
        }
    }
}

TEST_CASE("delaunay of a convex quadrilateral has two triangles") {
    const std::vector<Point> pts{{0, 0}, {4, 0}, {4, 3}, {0, 3.5}};
    CHECK(triangulate(pts).size() == 2);
}

TEST_CASE("triangulate rejects degenerate input") {
    CHECK_THROWS_AS(triangulate(std::vector<Point>{{0, 0}, {1, 1}}), GeometryError);
    CHECK_THROWS_AS(triangulate(std::vector<Point>{{0, 0}, {1, 1}, {2, 2}, {3, 3}}), GeometryError);
    CHECK_THROWS_AS(triangulate(std::vector<Point>{{0, 0}, {1, 0}, {1, 0}, {0, 1}}), GeometryError);
}

TEST_CASE("barycentric coordinates") {
    const Point a{0, 0}, b{4, 0}, c{0, 2};
    const auto at_b = barycentric(a, b, c, b);
    CHECK(at_b[0] == doctest::Approx(0.0));
    CHECK(at_b[1] == doctest::Approx(1.0));
    CHECK(at_b[2] == doctest::Approx(0.0));
    const auto mid = barycentric(a, b, c, {4.0 / 3.0, 2.0 / 3.0});
    for (double v : mid) CHECK(v == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("interpolation reproduces vertex values and linear fields") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const auto pts = oracle::random_points(30, 24, 24, rng);
        const auto layout = make_layout(pts, 24, 24);
        std::vector<float> values(pts.size());
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        for (auto& v : values) v = u(rng);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            CHECK(std::abs(interpolate_at(layout, values, pts[i]) - values[i]) < 1e-6);
        }
        // A linear field is reproduced at every pixel centre inside the hull.
        std::vector<float> linear(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) linear[i] = static_cast<float>(0.3 + 0.01 * pts[i].x - 0.02 * pts[i].y);
        const Image img = interpolate(layout, linear);
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) {
                const auto& s = layout.stencil[static_cast<std::size_t>(y) * 24 + x];
                if (s.fibre[1] < 0) continue;  // outside the hull
                CHECK(img.at(x, y) == doctest::Approx(0.3 + 0.01 * (x + 0.5) - 0.02 * (y + 0.5)).epsilon(1e-5));
            }
    }
}

TEST_CASE("stencil weights sum to one and cells agree with labels") {
    const auto layout = generate_layout(40, 40, 1.0 / 7.0, 0.2, 3);
    for (const auto& s : layout.stencil) {
        float total = 0.0f;
        for (int k = 0; k < 3; ++k) {
            if (s.fibre[k] >= 0) total += s.weight[k];
        }
        CHECK(total == doctest::Approx(1.0f).epsilon(1e-6));
    }
    for (int f = 0; f < layout.fibre_count(); ++f) {
        for (int p : layout.cells.cell(f)) {
            if (layout.cell_size[f] > 0) CHECK(layout.cell_label[p] == f);
        }
        CHECK(!layout.cells.cell(f).empty());
    }
}

TEST_CASE("empty voronoi cell falls back to the pixel under the fibre") {
    // A fibre on every pixel centre plus one extra that wins no centre.
    std::vector<Point> pts;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) pts.push_back({x + 0.5, y + 0.5});
    pts.push_back({1.3, 1.2});
    const auto layout = make_layout(pts, 8, 8);
    const int empty = 64;
    REQUIRE(layout.cell_size[empty] == 0);
    const auto cell = layout.cells.cell(empty);
    REQUIRE(cell.size() == 1);
    CHECK(cell[0] == 1 * 8 + 1);
}

TEST_CASE("generated layouts hit the requested density deterministically") {
    const auto a = generate_layout(64, 64, 1.0 / 7.0, 0.2, 9);
    const auto b = generate_layout(64, 64, 1.0 / 7.0, 0.2, 9);
    const auto c = generate_layout(64, 64, 1.0 / 7.0, 0.2, 10);
    CHECK(a.positions == b.positions);
    CHECK(a.positions != c.positions);
    CHECK(a.fibre_count() == doctest::Approx(64 * 64 / 7.0).epsilon(0.1));
    CHECK(a.fibre_count() <= 682);
    for (const auto& p : a.positions) {
        CHECK(p.x >= 0.0);
        CHECK(p.x < 64.0);
        CHECK(p.y >= 0.0);
        CHECK(p.y < 64.0);
    }
}

TEST_CASE("density one places a fibre on every pixel centre") {
    const auto layout = generate_layout(16, 16, 1.0, 0.0, 1);
    REQUIRE(layout.fibre_count() == 256);
    for (int s : layout.cell_size) CHECK(s == 1);
}

TEST_CASE("crop_layout keeps and shifts the fibres in the window") {
    const auto layout = generate_layout(64, 64, 1.0 / 7.0, 0.2, 4);
    const auto crop = crop_layout(layout, 16, 32, 32, 32);
    CHECK(crop.width == 32);
    CHECK(crop.height == 32);
    std::size_t expected = 0;
    for (const auto& p : layout.positions) expected += p.x >= 16 && p.x < 48 && p.y >= 32 && p.y < 64;
    CHECK(crop.positions.size() == expected);
    for (const auto& p : crop.positions) {
        CHECK(p.x >= 0.0);
        CHECK(p.x < 32.0);
    }
    const auto sparse = make_layout({{1.0, 1.0}, {30.0, 30.0}, {1.0, 30.0}}, 32, 32);
    CHECK_THROWS_AS(crop_layout(sparse, 8, 8, 8, 8), GeometryError);
}

TEST_CASE("layout files round trip") {
    const auto layout = generate_layout(32, 32, 0.2, 0.3, 2);
    const auto path = std::filesystem::temp_directory_path() / "fbsr_layout_test.json";
    save_layout(path, layout);
    const auto back = load_layout(path);
    std::filesystem::remove(path);
    CHECK(back.positions == layout.positions);
    CHECK(back.cell_label == layout.cell_label);
    CHECK(back.triangles == layout.triangles);
}

TEST_CASE("make_layout validates positions") {
    CHECK_THROWS_AS(make_layout({}, 8, 8), GeometryError);
    CHECK_THROWS(make_layout({{9.0, 1.0}}, 8, 8));
    CHECK_THROWS(make_layout({{1.0, 1.0}}, 0, 8));
}
