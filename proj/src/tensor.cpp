#include "ventseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace ventseg {

std::string to_string(const Extent3& e) {
    std::ostringstream os;
    os << e.d << "x" << e.h << "x" << e.w;
    return os.str();
}

Tensor::Tensor(std::int64_t n, std::int64_t c, Extent3 extent, Real fill)
    : n_(n), c_(c), extent_(extent) {
    if (n < 0 || c < 0 || extent.d < 0 || extent.h < 0 || extent.w < 0)
        throw std::invalid_argument("negative tensor dimension");
    data_.assign(static_cast<std::size_t>(n * c * extent.voxels()), fill);
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << "[" << n_ << "," << c_ << "," << to_string(extent_) << "]";
    return os.str();
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n() != b.n() || !(a.extent() == b.extent()))
        throw std::invalid_argument("concat_channels: shape mismatch " + a.shape_string() + " vs " +
                                    b.shape_string());
    Tensor out(a.n(), a.c() + b.c(), a.extent());
    const auto s = a.spatial();
    for (std::int64_t i = 0; i < a.n(); ++i) {
        std::memcpy(out.plane(i, 0), a.plane(i, 0), sizeof(Real) * a.c() * s);
        std::memcpy(out.plane(i, a.c()), b.plane(i, 0), sizeof(Real) * b.c() * s);
    }
    return out;
}

void split_channels(const Tensor& joined, std::int64_t first_channels, Tensor& a, Tensor& b) {
    const auto s = joined.spatial();
    const auto second = joined.c() - first_channels;
    a = Tensor(joined.n(), first_channels, joined.extent());
    b = Tensor(joined.n(), second, joined.extent());
    for (std::int64_t i = 0; i < joined.n(); ++i) {
        std::memcpy(a.plane(i, 0), joined.plane(i, 0), sizeof(Real) * first_channels * s);
        std::memcpy(b.plane(i, 0), joined.plane(i, first_channels), sizeof(Real) * second * s);
    }
}

bool all_finite(std::span<const Real> values) {
    return std::all_of(values.begin(), values.end(), [](Real v) { return std::isfinite(v); });
}

}  // namespace ventseg
