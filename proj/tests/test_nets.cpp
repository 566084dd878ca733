#include <doctest.h>

#include <cmath>
#include <random>

#include "ventseg/nets.hpp"

using namespace ventseg;

namespace {

Tensor random_tensor(std::int64_t n, std::int64_t c, Extent3 e, std::uint64_t seed) {
    Tensor t(n, c, e);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    for (auto& v : t.values()) v = static_cast<Real>(d(rng));
    return t;
}

Tensor coords_for(Extent3 e, std::int64_t n = 1) {
    const auto in = cppn_input(normalized_coords(Extent3{std::max<std::int64_t>(e.d, 2), e.h, e.w}));
    Tensor t(n, 9, e);
    for (std::int64_t b = 0; b < n; ++b) copy_window(in, {0, 0, 0}, t, b);
    return t;
}

std::int64_t count_kind(const std::vector<LayerDesc>& l, LayerKind k) {
    return std::count_if(l.begin(), l.end(), [&](const LayerDesc& d) { return d.kind == k; });
}

// Trainable scalars from the listing alone.
std::int64_t listed_parameters(const NetworkSpec& spec) {
    std::int64_t total = 0;
    for (const auto& l : describe(spec)) {
        if (l.kind == LayerKind::max_pool) continue;
        total += l.in_channels * l.out_channels * l.kernel.voxels() + l.out_channels;
        if (l.kind != LayerKind::classifier) total += 2 * l.out_channels;
    }
    if (spec.use_cppn) {
        std::int64_t in = 9;
        for (auto w : spec.cppn.widths) {
            total += in * w + w + 2 * w;
            in = w;
        }
    }
    return total;
}

}  // namespace

TEST_CASE("spec validation and names") {
    CHECK_NOTHROW(NetworkSpec::unet2d().validate());
    CHECK_NOTHROW(NetworkSpec::vnet3d().validate());
    CHECK_THROWS_AS(NetworkSpec::unet2d(0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(NetworkSpec::unet2d(5).validate(), std::invalid_argument);
    CHECK_THROWS_AS(NetworkSpec::vnet3d(4).validate(), std::invalid_argument);
    CHECK_THROWS_AS(NetworkSpec::unet2d(2, 0).validate(), std::invalid_argument);
    CHECK(family_from_string("unet2d") == Family::unet2d);
    CHECK_THROWS_AS(family_from_string("resnet"), std::invalid_argument);
    auto r = NetworkSpec::unet2d();
    r.residual = true;
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
}

TEST_CASE("growth labels") {
    auto u = NetworkSpec::unet2d(1);
    std::vector<int> seen{u.nominal_layers()};
    while (u.depth_level < u.max_depth()) {
        u = grow_depth(u);
        seen.push_back(u.nominal_layers());
    }
    CHECK(seen == std::vector<int>{9, 14, 19, 24});
    CHECK_THROWS_AS(grow_depth(u), std::invalid_argument);

    auto v = NetworkSpec::vnet3d(0);
    seen = {v.nominal_layers()};
    while (v.depth_level < v.max_depth()) {
        v = grow_depth(v);
        seen.push_back(v.nominal_layers());
    }
    CHECK(seen == std::vector<int>{7, 15, 23, 31});
}

TEST_CASE("growth is local to the bottom") {
    for (auto s : {NetworkSpec::unet2d(2, 8), NetworkSpec::vnet3d(1, 4)}) {
        const auto a = describe(s);
        const auto b = describe(grow_depth(s));
        for (const auto& l : a) {
            if (!l.stage.starts_with("enc")) continue;
            if (std::stoi(l.stage.substr(3)) >= s.depth_level) continue;
            CHECK(std::find(b.begin(), b.end(), l) != b.end());
        }
        const auto pools = [&](const std::vector<LayerDesc>& d) {
            return count_kind(d, LayerKind::max_pool) + count_kind(d, LayerKind::down_conv);
        };
        CHECK(pools(b) == pools(a) + 1);
    }
}

TEST_CASE("listing agrees with the built network") {
    for (auto s : {NetworkSpec::unet2d(1, 4), NetworkSpec::unet2d(3, 4, false), NetworkSpec::vnet3d(0, 4),
                   NetworkSpec::vnet3d(2, 2, false)}) {
        const auto d = describe(s);
        CHECK(static_cast<int>(d.size() - count_kind(d, LayerKind::max_pool)) == s.learnable_layers());
        const auto net = Network::build(s, 1);
        CHECK(static_cast<std::int64_t>(net.parameter_count()) == listed_parameters(s));
    }
}

TEST_CASE("parameter counts") {
    const auto u = listed_parameters(NetworkSpec::unet2d(4, 64));
    const auto v = listed_parameters(NetworkSpec::vnet3d(3, 32));
    CHECK(u > 0.7 * 31e6);
    CHECK(u < 1.3 * 31e6);
    CHECK(v > 0.7 * 16e6);
    CHECK(v < 1.3 * 16e6);
    CHECK(v < u);
    CHECK(listed_parameters(NetworkSpec::unet2d(4, 8)) > listed_parameters(NetworkSpec::unet2d(3, 8)));
}

TEST_CASE("initialization") {
    const auto s = NetworkSpec::unet2d(2, 4);
    const auto a = Network::build(s, 3);
    const auto b = Network::build(s, 3);
    const auto c = Network::build(s, 4);
    CHECK(a.params() == b.params());
    CHECK(!(a.params() == c.params()));
    for (const auto& p : a.params().all())
        if (p.name.ends_with(".bias"))
            for (Real v : p.value) CHECK(v == Real(0.01));
}

TEST_CASE("softmax normalization and shapes") {
    for (auto s : {NetworkSpec::unet2d(2, 4), NetworkSpec::vnet3d(1, 2)}) {
        auto net = Network::build(s, 2);
        const Extent3 e = s.is_3d() ? Extent3{4, 8, 8} : Extent3{1, 8, 12};
        const auto x = random_tensor(2, 1, e, 1);
        const auto coords = coords_for(e, 2);
        for (auto mode : {Mode::train, Mode::eval}) {
            const auto p = net.forward(x, &coords, mode);
            CHECK(p.c() == 2);
            CHECK(p.extent() == e);
            for (std::int64_t b = 0; b < 2; ++b)
                for (std::int64_t i = 0; i < p.spatial(); ++i)
                    REQUIRE(p.plane(b, 0)[i] + p.plane(b, 1)[i] == doctest::Approx(1).epsilon(1e-5));
        }
    }
}

TEST_CASE("input checks") {
    auto net = Network::build(NetworkSpec::unet2d(2, 4), 1);
    const auto coords = coords_for({1, 8, 8});
    CHECK_THROWS_AS(net.forward(random_tensor(1, 1, {1, 8, 8}, 1), nullptr, Mode::train), std::invalid_argument);
    CHECK_THROWS_AS(net.forward(random_tensor(1, 1, {1, 8, 6}, 1), &coords, Mode::train), std::invalid_argument);
    CHECK_THROWS_AS(net.forward(random_tensor(1, 2, {1, 8, 8}, 1), &coords, Mode::train), std::invalid_argument);
    const auto shifted = coords_for({1, 8, 12});
    CHECK_THROWS_AS(net.forward(random_tensor(1, 1, {1, 8, 8}, 1), &shifted, Mode::train), std::invalid_argument);
    auto fresh = Network::build(NetworkSpec::unet2d(2, 4), 1);
    CHECK(!fresh.statistics_ready());
    CHECK_THROWS_AS(fresh.forward(random_tensor(1, 1, {1, 8, 8}, 1), &coords, Mode::eval), std::logic_error);
    CHECK_THROWS_AS(fresh.backward(Tensor(1, 2, {1, 8, 8})), std::logic_error);
}

TEST_CASE("zeroed classifier gives one half everywhere") {
    auto net = Network::build(NetworkSpec::unet2d(1, 4), 1);
    auto& st = net.params();
    std::fill(st[net.classifier().weight_index()].value.begin(), st[net.classifier().weight_index()].value.end(), Real(0));
    st[net.classifier().bias_index()].value = {0, 0};
    const auto coords = coords_for({1, 6, 6});
    const auto p = net.forward(random_tensor(1, 1, {1, 6, 6}, 2), &coords, Mode::train);
    for (Real v : p.values()) CHECK(v == Real(0.5));
}

TEST_CASE("patterns at the fusion point ignore the image") {
    auto net = Network::build(NetworkSpec::unet2d(2, 4), 5);
    const Extent3 e{1, 8, 8};
    const auto coords = coords_for(e);
    net.forward(random_tensor(1, 1, e, 1), &coords, Mode::train);
    Tensor pa, pb;
    net.infer(random_tensor(1, 1, e, 2), &coords, &pa);
    net.infer(random_tensor(1, 1, e, 3), &coords, &pb);
    CHECK(pa.c() == 8);
    CHECK(pa == pb);
    net.forward(random_tensor(1, 1, e, 4), &coords, Mode::eval);
    CHECK(net.last_patterns() == pa);
}

TEST_CASE("prediction tie rule") {
    CHECK(predict_label(Real(0.9), Real(0.1)) == 0);
    CHECK(predict_label(Real(0.1), Real(0.9)) == 1);
    CHECK(predict_label(Real(0.5), Real(0.5)) == 0);
    Tensor p(1, 2, {1, 1, 3});
    p.at(0, 0, 0, 0, 0) = 0.9f, p.at(0, 1, 0, 0, 0) = 0.1f;
    p.at(0, 0, 0, 0, 1) = 0.1f, p.at(0, 1, 0, 0, 1) = 0.9f;
    p.at(0, 0, 0, 0, 2) = 0.5f, p.at(0, 1, 0, 0, 2) = 0.5f;
    CHECK(predict_labels(p).data == std::vector<std::uint8_t>{0, 1, 0});
}

TEST_CASE("translation by a pooling period commutes in the interior") {
    for (auto s : {NetworkSpec::unet2d(1, 4, false), NetworkSpec::unet2d(2, 4, false)}) {
        auto net = Network::build(s, 8);
        net.forward(random_tensor(2, 1, {1, 16, 16}, 9), nullptr, Mode::train);
        const std::int64_t period = std::int64_t{1} << s.depth_level, side = 64;
        const auto big = random_tensor(1, 1, {1, side, side + period}, 10);
        Tensor a(1, 1, {1, side, side}), b(1, 1, {1, side, side});
        for (std::int64_t y = 0; y < side; ++y)
            for (std::int64_t x = 0; x < side; ++x) {
                a.at(0, 0, 0, y, x) = big.at(0, 0, 0, y, x);
                b.at(0, 0, 0, y, x) = big.at(0, 0, 0, y, x + period);
            }
        const auto pa = net.infer(a, nullptr);
        const auto pb = net.infer(b, nullptr);
        for (std::int64_t y = 24; y < 40; ++y)
            for (std::int64_t x = 24; x < 40; ++x)
                REQUIRE(pb.at(0, 1, 0, y, x) == doctest::Approx(pa.at(0, 1, 0, y, x + period)).epsilon(1e-4));
    }
}

TEST_CASE("copies are independent and load_parameters checks layout") {
    auto a = Network::build(NetworkSpec::unet2d(1, 4), 1);
    auto b = a;
    b.params()[0].value[0] += 1;
    CHECK(!(a.params() == b.params()));
    b.load_parameters(a.params());
    CHECK(a.params() == b.params());
    auto c = Network::build(NetworkSpec::unet2d(2, 4), 1);
    CHECK_THROWS_AS(c.load_parameters(a.params()), std::invalid_argument);
}

TEST_CASE("spec json round trip") {
    auto s = NetworkSpec::vnet3d(2, 16, false);
    s.residual = true;
    nlohmann::json j = s;
    CHECK(j.get<NetworkSpec>() == s);
}

TEST_CASE("forward and backward are reproducible across copies") {
    for (auto s : {NetworkSpec::unet2d(4, 4), NetworkSpec::unet2d(1, 4), NetworkSpec::vnet3d(2, 2)}) {
        const Extent3 e = s.is_3d() ? Extent3{4, 8, 8} : Extent3{1, 16, 16};
        const auto x = random_tensor(2, 1, e, 1);
        const auto coords = coords_for(e, 2);
        const auto w = random_tensor(2, 2, e, 2);
        const auto net = Network::build(s, 6);
        std::vector<std::vector<Real>> first;
        for (int rep = 0; rep < 4; ++rep) {
            // Spacer allocations shift the alignment of later buffers.
            std::vector<char> spacer(static_cast<std::size_t>(8 * rep + 4));
            auto copy = net;
            auto xc = x;
            copy.params().zero_grad();
            copy.forward(xc, &coords, Mode::train);
            copy.backward(w);
            std::vector<std::vector<Real>> grads;
            for (const auto& p : copy.params().all()) grads.push_back(p.grad);
            if (rep == 0)
                first = grads;
            else
                CHECK(grads == first);
        }
    }
}
