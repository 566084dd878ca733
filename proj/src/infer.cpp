#include "ventseg/infer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ventseg {

std::int64_t WindowPlan::coverage(std::int64_t z) const {
    std::int64_t n = 0;
    for (auto o : origins)
        if (o <= z && z < o + extent) ++n;
    return n;
}

std::int64_t padded_depth(std::int64_t depth, std::int64_t extent, std::int64_t stride) {
    if (depth <= extent) return extent;
    const auto rem = (depth - extent) % stride;
    return rem == 0 ? depth : depth + (stride - rem);
}

WindowPlan plan_windows(std::int64_t depth, std::int64_t extent, double overlap) {
    if (extent <= 0 || extent > depth)
        throw std::invalid_argument("window extent " + std::to_string(extent) + " must lie in [1, " +
                                    std::to_string(depth) + "]");
    if (!(overlap >= 0.0 && overlap < 1.0)) throw std::invalid_argument("overlap must lie in [0, 1)");
    WindowPlan plan;
    plan.depth = depth;
    plan.extent = extent;
    const double exact = static_cast<double>(extent) * (1.0 - overlap);
    const auto stride = static_cast<std::int64_t>(std::llround(exact));
    const bool integral = stride > 0 && std::abs(exact - static_cast<double>(stride)) < 1e-9;
    if (depth == extent) {
        plan.stride = integral ? stride : extent;
        plan.origins = {0};
        return plan;
    }
    if (!integral) {
        std::ostringstream os;
        os << "window stride " << exact << " (extent " << extent << ", overlap " << overlap
           << ") is not a positive integer";
        throw std::invalid_argument(os.str());
    }
    if ((depth - extent) % stride != 0) {
        std::ostringstream os;
        os << "windows of extent " << extent << " and stride " << stride << " do not tile depth " << depth
           << "; pad to depth " << padded_depth(depth, extent, stride);
        throw std::invalid_argument(os.str());
    }
    plan.stride = stride;
    for (std::int64_t o = 0; o + extent <= depth; o += stride) plan.origins.push_back(o);
    return plan;
}

namespace {

using Clock = std::chrono::steady_clock;

Segmentation empty_segmentation(const Volume& v) {
    Segmentation s;
    for (auto& sc : s.scores) sc = Volume(v.shape, v.spacing, 0.0f);
    s.labels = LabelMap(v.shape, v.spacing);
    return s;
}

void finish_labels(Segmentation& s) {
    for (std::size_t i = 0; i < s.labels.data.size(); ++i)
        s.labels.data[i] = predict_label(static_cast<Real>(s.scores[0].data[i]), static_cast<Real>(s.scores[1].data[i]));
}

void check_coords(const Network& net, const Volume& volume, const CppnInput* coords) {
    if (!net.spec().use_cppn) return;
    if (!coords) throw std::invalid_argument("network with CPPN requires coordinate input");
    if (!(coords->shape() == volume.shape))
        throw std::invalid_argument("coordinate shape " + to_string(coords->shape()) + " differs from volume " +
                                    to_string(volume.shape));
}

}  // namespace

Segmentation segment_2d(const Network& net, const Volume& volume, const CppnInput* coords, const SliceOptions& options) {
    if (net.spec().is_3d()) throw std::invalid_argument("segment_2d requires a unet2d network");
    check_coords(net, volume, coords);
    const auto start = Clock::now();
    Segmentation seg = empty_segmentation(volume);
    const auto& e = volume.shape;
    const auto plane = e.h * e.w;
    const auto batch = std::max<std::int64_t>(1, options.batch);
    for (std::int64_t z0 = 0; z0 < e.d; z0 += batch) {
        const auto n = std::min(batch, e.d - z0);
        Tensor x(n, 1, {1, e.h, e.w});
        Tensor c;
        if (net.spec().use_cppn) c = Tensor(n, CppnInput::kChannels, {1, e.h, e.w});
        for (std::int64_t b = 0; b < n; ++b) {
            const float* src = volume.data.data() + (z0 + b) * plane;
            std::copy(src, src + plane, x.plane(b, 0));
            if (net.spec().use_cppn) copy_window(*coords, {z0 + b, 0, 0}, c, b);
        }
        const Tensor p = net.infer(x, net.spec().use_cppn ? &c : nullptr);
        ++seg.forward_passes;
        for (std::int64_t b = 0; b < n; ++b)
            for (int k = 0; k < 2; ++k)
                std::copy(p.plane(b, k), p.plane(b, k) + plane,
                          seg.scores[static_cast<std::size_t>(k)].data.begin() + (z0 + b) * plane);
    }
    finish_labels(seg);
    seg.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return seg;
}

Segmentation segment_3d(const Network& net, const Volume& volume, const CppnInput* coords, const WindowPlan& plan) {
    if (!net.spec().is_3d()) throw std::invalid_argument("segment_3d requires a vnet3d network");
    check_coords(net, volume, coords);
    if (plan.depth != volume.shape.d || plan.origins.empty() || plan.origins.front() != 0 ||
        plan.origins.back() + plan.extent != volume.shape.d)
        throw std::invalid_argument("window plan does not cover volume depth " + std::to_string(volume.shape.d));
    const auto start = Clock::now();
    Segmentation seg = empty_segmentation(volume);
    const auto& e = volume.shape;
    const auto plane = e.h * e.w;
    const Extent3 window{plan.extent, e.h, e.w};
    for (auto origin : plan.origins) {
        Tensor x(1, 1, window);
        const float* src = volume.data.data() + origin * plane;
        std::copy(src, src + window.voxels(), x.plane(0, 0));
        Tensor c;
        if (net.spec().use_cppn) {
            c = Tensor(1, CppnInput::kChannels, window);
            copy_window(*coords, {origin, 0, 0}, c, 0);
        }
        const Tensor p = net.infer(x, net.spec().use_cppn ? &c : nullptr);
        ++seg.forward_passes;
        // Sequential accumulation keeps results bitwise reproducible.
        for (int k = 0; k < 2; ++k) {
            auto& acc = seg.scores[static_cast<std::size_t>(k)].data;
            const Real* pk = p.plane(0, k);
            for (std::int64_t i = 0; i < window.voxels(); ++i)
                acc[static_cast<std::size_t>(origin * plane + i)] += static_cast<float>(pk[i]);
        }
    }
    finish_labels(seg);
    seg.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return seg;
}

Segmentation segment(const Network& net, const Volume& volume, const CppnInput* coords, std::int64_t window_extent,
                     double overlap, std::int64_t slice_batch) {
    if (!net.spec().is_3d()) return segment_2d(net, volume, coords, {slice_batch});
    const auto extent = std::min(window_extent, volume.shape.d);
    const auto stride = std::max<std::int64_t>(1, std::llround(static_cast<double>(extent) * (1.0 - overlap)));
    const auto depth = padded_depth(volume.shape.d, extent, stride);
    if (depth == volume.shape.d) return segment_3d(net, volume, coords, plan_windows(depth, extent, overlap));

    // Zero-pad the far end of z; coordinates repeat the last slice.
    const Extent3 padded{depth, volume.shape.h, volume.shape.w};
    Volume pv = extract_window(volume, {0, 0, 0}, padded, 0.0f);
    CppnInput pc;
    if (coords) {
        for (std::size_t k = 0; k < pc.channels.size(); ++k) {
            const auto& src = coords->channels[k];
            pc.channels[k] = extract_window(src, {0, 0, 0}, padded, Real(0));
            for (std::int64_t z = volume.shape.d; z < depth; ++z)
                for (std::int64_t y = 0; y < padded.h; ++y)
                    for (std::int64_t x = 0; x < padded.w; ++x)
                        pc.channels[k](z, y, x) = src(volume.shape.d - 1, y, x);
        }
    }
    Segmentation s = segment_3d(net, pv, coords ? &pc : nullptr, plan_windows(depth, extent, overlap));
    Segmentation out;
    for (int k = 0; k < 2; ++k)
        out.scores[static_cast<std::size_t>(k)] = extract_window(s.scores[static_cast<std::size_t>(k)], {0, 0, 0}, volume.shape);
    out.labels = extract_window(s.labels, {0, 0, 0}, volume.shape);
    out.seconds = s.seconds;
    out.forward_passes = s.forward_passes;
    return out;
}

}  // namespace ventseg
