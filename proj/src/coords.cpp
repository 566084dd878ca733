#include "ventseg/coords.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ventseg {

double normalized_coordinate(std::int64_t i, std::int64_t n) {
    return static_cast<double>(2 * (i + 1) - (n + 1)) / static_cast<double>(n - 1);
}

CoordinateMaps normalized_coords(std::int64_t side, const CoordOptions& options) {
    return normalized_coords(Extent3{side, side, side}, options);
}

CoordinateMaps normalized_coords(Extent3 shape, const CoordOptions& options) {
    if (shape.d < 2 || shape.h < 2 || shape.w < 2)
        throw std::invalid_argument("normalized coordinates need at least 2 voxels per axis");
    CoordinateMaps m{Field(shape, {}), Field(shape, {}), Field(shape, {})};
    auto fold = [&](Axis a, double v) { return options.mirror_axis == a ? std::abs(v) : v; };
    for (std::int64_t z = 0; z < shape.d; ++z) {
        const auto zn = static_cast<Real>(fold(Axis::z, normalized_coordinate(z, shape.d)));
        for (std::int64_t y = 0; y < shape.h; ++y) {
            const auto yn = static_cast<Real>(fold(Axis::y, normalized_coordinate(y, shape.h)));
            for (std::int64_t x = 0; x < shape.w; ++x) {
                m.xc(z, y, x) = static_cast<Real>(fold(Axis::x, normalized_coordinate(x, shape.w)));
                m.yc(z, y, x) = yn;
                m.zc(z, y, x) = zn;
            }
        }
    }
    return m;
}

CppnInput cppn_input(const CoordinateMaps& maps) {
    CppnInput in;
    const auto shape = maps.shape();
    for (auto& ch : in.channels) ch = Field(shape, {});
    for (std::size_t i = 0; i < maps.xc.size(); ++i) {
        const Real x = maps.xc.data[i], y = maps.yc.data[i], z = maps.zc.data[i];
        in.channels[0].data[i] = x * x;
        in.channels[1].data[i] = y * y;
        in.channels[2].data[i] = z * z;
        in.channels[3].data[i] = x * y;
        in.channels[4].data[i] = x * z;
        in.channels[5].data[i] = y * z;
        in.channels[6].data[i] = x;
        in.channels[7].data[i] = y;
        in.channels[8].data[i] = z;
    }
    return in;
}

namespace {

void check_window(Extent3 field, Extent3 origin, Extent3 shape) {
    auto ok = [](std::int64_t o, std::int64_t s, std::int64_t n) { return o >= 0 && s > 0 && o + s <= n; };
    if (!ok(origin.d, shape.d, field.d) || !ok(origin.h, shape.h, field.h) || !ok(origin.w, shape.w, field.w))
        throw std::out_of_range("crop window " + to_string(shape) + " at " + to_string(origin) +
                                " exceeds field " + to_string(field));
}

}  // namespace

CoordinateMaps crop_coords(const CoordinateMaps& maps, Extent3 origin, Extent3 shape) {
    check_window(maps.shape(), origin, shape);
    return {extract_window(maps.xc, origin, shape), extract_window(maps.yc, origin, shape),
            extract_window(maps.zc, origin, shape)};
}

CppnInput crop_coords(const CppnInput& input, Extent3 origin, Extent3 shape) {
    check_window(input.shape(), origin, shape);
    CppnInput out;
    for (std::size_t k = 0; k < out.channels.size(); ++k)
        out.channels[k] = extract_window(input.channels[k], origin, shape);
    return out;
}

Tensor to_tensor(const CppnInput& input) {
    Tensor t(1, CppnInput::kChannels, input.shape());
    copy_window(input, {0, 0, 0}, t, 0);
    return t;
}

void copy_window(const CppnInput& input, Extent3 origin, Tensor& dst, std::int64_t b) {
    const auto shape = dst.extent();
    check_window(input.shape(), origin, shape);
    const auto full = input.shape();
    for (std::int64_t k = 0; k < CppnInput::kChannels; ++k) {
        const auto& src = input.channels[static_cast<std::size_t>(k)].data;
        Real* out = dst.plane(b, k);
        for (std::int64_t z = 0; z < shape.d; ++z)
            for (std::int64_t y = 0; y < shape.h; ++y) {
                const auto s = static_cast<std::size_t>(((origin.d + z) * full.h + origin.h + y) * full.w + origin.w);
                std::copy(src.begin() + static_cast<std::ptrdiff_t>(s),
                          src.begin() + static_cast<std::ptrdiff_t>(s + shape.w), out + (z * shape.h + y) * shape.w);
            }
    }
}

}  // namespace ventseg
