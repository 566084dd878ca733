#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ventseg/coords.hpp"
#include "ventseg/grid.hpp"
#include "ventseg/nets.hpp"

namespace ventseg {

// Overlapping windows along z; each window spans the full slice plane.
struct WindowPlan {
    std::int64_t depth = 0;
    std::int64_t extent = 0;
    std::int64_t stride = 0;
    std::vector<std::int64_t> origins;

    double overlap() const { return 1.0 - static_cast<double>(stride) / static_cast<double>(extent); }
    // Number of windows covering slice z.
    std::int64_t coverage(std::int64_t z) const;
    // Slices pushed through the network in total (windows x extent).
    std::int64_t slice_equivalents() const { return static_cast<std::int64_t>(origins.size()) * extent; }
};

// Throws std::invalid_argument when the stride is not a positive integer or
// does not tile [0, depth - extent]; the message names the padded depth
// that would.
WindowPlan plan_windows(std::int64_t depth, std::int64_t extent, double overlap);

// Smallest depth >= `depth` for which the plan tiles exactly.
std::int64_t padded_depth(std::int64_t depth, std::int64_t extent, std::int64_t stride);

struct Segmentation {
    // Per-class probabilities (2D) or per-class window sums (3D).
    std::array<Volume, 2> scores;
    LabelMap labels;
    double seconds = 0;
    std::int64_t forward_passes = 0;
};

struct SliceOptions {
    // Slices per forward pass.
    std::int64_t batch = 1;
};

// Coronal slice-by-slice segmentation with a unet2d network. `coords` is the
// CPPN input over the whole volume, required when the network uses a CPPN.
Segmentation segment_2d(const Network& net, const Volume& volume, const CppnInput* coords,
                        const SliceOptions& options = {});

// Sliding-window segmentation with a vnet3d network: class probabilities are
// summed over every window covering a voxel, then arg-maxed.
Segmentation segment_3d(const Network& net, const Volume& volume, const CppnInput* coords, const WindowPlan& plan);

// Picks the family-appropriate route. For vnet3d the plan is derived from
// `window_extent` and `overlap`, padding the far end of z when needed.
Segmentation segment(const Network& net, const Volume& volume, const CppnInput* coords,
                     std::int64_t window_extent = 64, double overlap = 0.75, std::int64_t slice_batch = 1);

}  // namespace ventseg
