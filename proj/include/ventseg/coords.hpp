#pragma once

#include <array>
#include <cstdint>

#include "ventseg/grid.hpp"
#include "ventseg/tensor.hpp"

namespace ventseg {

enum class Axis { z, y, x };

struct CoordOptions {
    // Axis whose coordinate is folded with |.| (left/right hemispheres).
    Axis mirror_axis = Axis::y;
};

using Field = Grid<Real>;

// Normalized coordinate fields. Unfolded axes span [-1, 1]; the mirror
// axis spans [0, 1].
struct CoordinateMaps {
    Field xc;
    Field yc;
    Field zc;

    Extent3 shape() const { return xc.shape; }
};

// Channel order: x^2, y^2, z^2, xy, xz, yz, x, y, z.
struct CppnInput {
    static constexpr std::int64_t kChannels = 9;
    std::array<Field, kChannels> channels;

    Extent3 shape() const { return channels[0].shape; }
};

// Normalized coordinate of 0-based index i on an axis of length n:
// (2(i+1) - (n+1)) / (n-1).
double normalized_coordinate(std::int64_t i, std::int64_t n);

CoordinateMaps normalized_coords(std::int64_t side, const CoordOptions& options = {});
CoordinateMaps normalized_coords(Extent3 shape, const CoordOptions& options = {});

CppnInput cppn_input(const CoordinateMaps& maps);

// Restriction of the global fields to [origin, origin + shape); values are
// not renormalized. Throws std::out_of_range when the window leaves the field.
CoordinateMaps crop_coords(const CoordinateMaps& maps, Extent3 origin, Extent3 shape);
CppnInput crop_coords(const CppnInput& input, Extent3 origin, Extent3 shape);

// [1, 9, d, h, w] tensor view of a (cropped) input.
Tensor to_tensor(const CppnInput& input);
// Writes the window of `input` at `origin` into sample `b` of `dst`.
void copy_window(const CppnInput& input, Extent3 origin, Tensor& dst, std::int64_t b);

}  // namespace ventseg
