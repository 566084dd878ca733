#include <doctest.h>

#include <cmath>
#include <random>

#include "ventseg/coords.hpp"

using namespace ventseg;

TEST_CASE("normalized coordinate endpoints and centre") {
    CHECK(normalized_coordinate(0, 320) == -1.0);
    CHECK(normalized_coordinate(319, 320) == 1.0);
    CHECK(normalized_coordinate(2, 5) == 0.0);
    CHECK(normalized_coordinate(1, 5) == -0.5);
    CHECK(normalized_coordinate(48, 97) == 0.0);
}

TEST_CASE("mirror axis folds y") {
    const auto m = normalized_coords(Extent3{4, 320, 6});
    CHECK(m.yc(0, 0, 0) == 1.0f);
    CHECK(m.yc(0, 319, 0) == 1.0f);
    CHECK(m.xc(0, 0, 0) == -1.0f);
    CHECK(m.xc(0, 0, 5) == 1.0f);
    CHECK(m.zc(0, 0, 0) == -1.0f);
    CHECK(m.zc(3, 0, 0) == 1.0f);

    CoordOptions opt;
    opt.mirror_axis = Axis::x;
    const auto mx = normalized_coords(Extent3{3, 3, 3}, opt);
    CHECK(mx.yc(0, 0, 0) == -1.0f);
    CHECK(mx.xc(0, 0, 0) == 1.0f);
    CHECK(mx.xc(0, 0, 1) == 0.0f);
}

TEST_CASE("coordinate monotonicity") {
    const auto m = normalized_coords(Extent3{7, 8, 9});
    for (std::int64_t x = 1; x < 9; ++x) CHECK(m.xc(2, 3, x) > m.xc(2, 3, x - 1));
    for (std::int64_t z = 1; z < 7; ++z) CHECK(m.zc(z, 3, 4) > m.zc(z - 1, 3, 4));
    // V-shape: decreasing to the centre, then increasing.
    for (std::int64_t y = 1; y < 4; ++y) CHECK(m.yc(0, y, 0) < m.yc(0, y - 1, 0));
    for (std::int64_t y = 5; y < 8; ++y) CHECK(m.yc(0, y, 0) > m.yc(0, y - 1, 0));
    for (std::int64_t y = 0; y < 8; ++y) CHECK(m.yc(0, y, 0) >= 0.0f);
}

TEST_CASE("cppn input channels") {
    const auto in = cppn_input(normalized_coords(Extent3{3, 3, 3}));
    // Voxel with (x, y, z) = (1, 1, -1).
    const std::array<float, 9> corner{1, 1, 1, 1, -1, -1, 1, 1, -1};
    for (std::size_t k = 0; k < 9; ++k) CHECK(in.channels[k](0, 0, 2) == corner[k]);
    for (std::size_t k = 0; k < 9; ++k) CHECK(in.channels[k](1, 1, 1) == 0.0f);
}

TEST_CASE("cppn input is invariant under y reflection") {
    for (std::int64_t n : {5, 8, 33}) {
        const auto in = cppn_input(normalized_coords(Extent3{4, n, 6}));
        for (const auto& ch : in.channels)
            for (std::int64_t z = 0; z < 4; ++z)
                for (std::int64_t y = 0; y < n; ++y)
                    for (std::int64_t x = 0; x < 6; ++x) REQUIRE(ch(z, y, x) == ch(z, n - 1 - y, x));
    }
}

TEST_CASE("crops") {
    const auto maps = normalized_coords(Extent3{6, 7, 8});
    const auto in = cppn_input(maps);

    const auto full = crop_coords(in, {0, 0, 0}, in.shape());
    for (std::size_t k = 0; k < 9; ++k) CHECK(full.channels[k] == in.channels[k]);

    const auto c = crop_coords(maps, {0, 0, 0}, {2, 2, 2});
    CHECK(c.xc(0, 0, 0) == maps.xc(0, 0, 0));
    CHECK(c.yc(1, 1, 1) == maps.yc(1, 1, 1));

    // Overlapping crops agree on their common region.
    const auto a = crop_coords(in, {1, 2, 3}, {3, 3, 3});
    const auto b = crop_coords(in, {2, 3, 4}, {3, 3, 3});
    for (std::size_t k = 0; k < 9; ++k)
        for (std::int64_t z = 0; z < 2; ++z)
            for (std::int64_t y = 0; y < 2; ++y)
                for (std::int64_t x = 0; x < 2; ++x) CHECK(a.channels[k](z + 1, y + 1, x + 1) == b.channels[k](z, y, x));

    CHECK_THROWS_AS(crop_coords(in, {4, 0, 0}, {3, 1, 1}), std::out_of_range);
    CHECK_THROWS_AS(crop_coords(maps, {-1, 0, 0}, {1, 1, 1}), std::out_of_range);
    CHECK_THROWS_AS(normalized_coords(Extent3{1, 4, 4}), std::invalid_argument);
}

TEST_CASE("crop of a crop equals one crop with composed origin") {
    const auto in = cppn_input(normalized_coords(Extent3{10, 12, 9}));
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
        auto pick = [&](std::int64_t n) {
            std::uniform_int_distribution<std::int64_t> s(1, n);
            const auto size = s(rng);
            std::uniform_int_distribution<std::int64_t> o(0, n - size);
            return std::pair{o(rng), size};
        };
        const auto [od, sd] = pick(10);
        const auto [oh, sh] = pick(12);
        const auto [ow, sw] = pick(9);
        const auto outer = crop_coords(in, {od, oh, ow}, {sd, sh, sw});
        std::uniform_int_distribution<std::int64_t> id(0, sd - 1), ih(0, sh - 1), iw(0, sw - 1);
        const Extent3 o2{id(rng), ih(rng), iw(rng)};
        const Extent3 s2{sd - o2.d, sh - o2.h, sw - o2.w};
        const auto twice = crop_coords(outer, o2, s2);
        const auto once = crop_coords(in, {od + o2.d, oh + o2.h, ow + o2.w}, s2);
        for (std::size_t k = 0; k < 9; ++k) REQUIRE(twice.channels[k] == once.channels[k]);
    }
}

TEST_CASE("copy window matches crop") {
    const auto in = cppn_input(normalized_coords(Extent3{5, 6, 7}));
    Tensor t(2, 9, {2, 3, 4});
    copy_window(in, {1, 2, 3}, t, 1);
    const auto c = crop_coords(in, {1, 2, 3}, {2, 3, 4});
    const auto ct = to_tensor(c);
    for (std::int64_t k = 0; k < 9; ++k)
        for (std::int64_t i = 0; i < 24; ++i) CHECK(t.plane(1, k)[i] == ct.plane(0, k)[i]);
    CHECK_THROWS_AS(copy_window(in, {4, 0, 0}, t, 0), std::out_of_range);
}
