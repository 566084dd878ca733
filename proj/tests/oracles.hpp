#pragma once

// Straightforward reference implementations used to check the library.

#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <tuple>
#include <vector>

#include "ventseg/grid.hpp"

namespace oracle {

using Voxel = std::tuple<std::int64_t, std::int64_t, std::int64_t>;

inline std::set<Voxel> foreground(const ventseg::LabelMap& m) {
    std::set<Voxel> s;
    for (std::int64_t z = 0; z < m.shape.d; ++z)
        for (std::int64_t y = 0; y < m.shape.h; ++y)
            for (std::int64_t x = 0; x < m.shape.w; ++x)
                if (m(z, y, x)) s.insert({z, y, x});
    return s;
}

inline double dice(const ventseg::LabelMap& a, const ventseg::LabelMap& b) {
    const auto sa = foreground(a), sb = foreground(b);
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& v : sa) inter += sb.count(v);
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size());
}

// Raster-ordered boundary voxels.
inline std::vector<Voxel> boundary(const ventseg::LabelMap& m) {
    const auto fg = foreground(m);
    std::vector<Voxel> out;
    const int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    for (const auto& v : fg) {
        const auto [z, y, x] = v;
        for (const auto& o : off)
            if (!fg.count({z + o[0], y + o[1], x + o[2]})) {
                out.push_back(v);
                break;
            }
    }
    return out;
}

inline double mean_nearest(const std::vector<Voxel>& from, const std::vector<Voxel>& to, double spacing) {
    double sum = 0;
    for (const auto& [az, ay, ax] : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [bz, by, bx] : to) {
            const double d = static_cast<double>((az - bz) * (az - bz) + (ay - by) * (ay - by) + (ax - bx) * (ax - bx));
            if (d < best) best = d;
        }
        sum += std::sqrt(best);
    }
    return spacing * sum / static_cast<double>(from.size());
}

// Isotropic spacing; same summation order as a per-boundary mean.
inline double mad(const ventseg::LabelMap& ref, const ventseg::LabelMap& pred, double spacing) {
    const auto br = boundary(ref), bp = boundary(pred);
    return 0.5 * (mean_nearest(bp, br, spacing) + mean_nearest(br, bp, spacing));
}

// Anisotropic all-pairs distance in millimetres.
inline double mad(const ventseg::LabelMap& ref, const ventseg::LabelMap& pred, const ventseg::Spacing& s) {
    const auto br = boundary(ref), bp = boundary(pred);
    auto side = [&](const std::vector<Voxel>& from, const std::vector<Voxel>& to) {
        double sum = 0;
        for (const auto& [az, ay, ax] : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [bz, by, bx] : to) {
                const double dz = (az - bz) * s.z, dy = (ay - by) * s.y, dx = (ax - bx) * s.x;
                best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
            }
            sum += best;
        }
        return sum / static_cast<double>(from.size());
    };
    return 0.5 * (side(bp, br) + side(br, bp));
}

// Continued fraction for the regularized incomplete beta function.
inline double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    double c = 1, d = 1 - (a + b) * x / (a + 1);
    if (std::abs(d) < tiny) d = tiny;
    d = 1 / d;
    double h = d;
    for (int m = 1; m < 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((a + m2 - 1) * (a + m2));
        d = 1 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1 / d;
        h *= d * c;
        aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1));
        d = 1 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1) < 1e-15) break;
    }
    return h;
}

inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0) return 0;
    if (x >= 1) return 1;
    const double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
    const double front = std::exp(lbeta + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1) / (a + b + 2)) return front * betacf(a, b, x) / a;
    return 1 - front * betacf(b, a, 1 - x) / b;
}

// Two-sided pooled-variance Student t-test p-value.
inline double ttest_p(const std::vector<double>& a, const std::vector<double>& b) {
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    const double ma = mean(a), mb = mean(b);
    double ss = 0;
    for (double x : a) ss += (x - ma) * (x - ma);
    for (double x : b) ss += (x - mb) * (x - mb);
    const double df = static_cast<double>(a.size() + b.size() - 2);
    const double sp2 = ss / df;
    const double t = (ma - mb) / std::sqrt(sp2 * (1.0 / a.size() + 1.0 / b.size()));
    return incomplete_beta(df / 2, 0.5, df / (df + t * t));
}

}  // namespace oracle
