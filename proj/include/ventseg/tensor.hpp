#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ventseg/real.hpp"

namespace ventseg {

// Spatial extent in (depth z, height y, width x) order.
struct Extent3 {
    std::int64_t d = 1;
    std::int64_t h = 1;
    std::int64_t w = 1;

    std::int64_t voxels() const { return d * h * w; }
    bool operator==(const Extent3&) const = default;
};

std::string to_string(const Extent3& e);

// Dense NCDHW tensor. 2D data is carried with d == 1.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::int64_t n, std::int64_t c, Extent3 extent, Real fill = Real(0));

    std::int64_t n() const { return n_; }
    std::int64_t c() const { return c_; }
    const Extent3& extent() const { return extent_; }
    std::int64_t spatial() const { return extent_.voxels(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::span<Real> values() { return data_; }
    std::span<const Real> values() const { return data_; }

    // Start of channel `ch` of sample `b`.
    Real* plane(std::int64_t b, std::int64_t ch) { return data_.data() + (b * c_ + ch) * spatial(); }
    const Real* plane(std::int64_t b, std::int64_t ch) const {
        return data_.data() + (b * c_ + ch) * spatial();
    }

    Real& at(std::int64_t b, std::int64_t ch, std::int64_t z, std::int64_t y, std::int64_t x) {
        return data_[static_cast<std::size_t>(((b * c_ + ch) * extent_.d + z) * extent_.h * extent_.w +
                                              y * extent_.w + x)];
    }
    Real at(std::int64_t b, std::int64_t ch, std::int64_t z, std::int64_t y, std::int64_t x) const {
        return data_[static_cast<std::size_t>(((b * c_ + ch) * extent_.d + z) * extent_.h * extent_.w +
                                              y * extent_.w + x)];
    }

    void fill(Real v);
    bool same_shape(const Tensor& other) const {
        return n_ == other.n_ && c_ == other.c_ && extent_ == other.extent_;
    }
    std::string shape_string() const;

    bool operator==(const Tensor&) const = default;

private:
    std::int64_t n_ = 0;
    std::int64_t c_ = 0;
    Extent3 extent_{0, 0, 0};
    std::vector<Real> data_;
};

// Concatenate along channels; all inputs share n and extent.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Split a channel-concatenated gradient back into its two parts.
void split_channels(const Tensor& joined, std::int64_t first_channels, Tensor& a, Tensor& b);

bool all_finite(std::span<const Real> values);

}  // namespace ventseg
