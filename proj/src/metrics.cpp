#include "ventseg/metrics.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace ventseg {

namespace {

void check_pair(const LabelMap& a, const LabelMap& b) {
    if (!(a.shape == b.shape))
        throw std::invalid_argument("mask shapes differ: " + to_string(a.shape) + " vs " + to_string(b.shape));
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas along one line (Felzenszwalb & Huttenlocher).
void transform_line(const double* f, double* d, std::int64_t n, double weight, std::vector<std::int64_t>& v,
                    std::vector<double>& z) {
    v.assign(static_cast<std::size_t>(n), 0);
    z.assign(static_cast<std::size_t>(n + 1), 0);
    std::int64_t k = -1;
    for (std::int64_t q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        const double fq = f[q] + weight * static_cast<double>(q * q);
        while (k >= 0) {
            const auto p = v[static_cast<std::size_t>(k)];
            const double s = (fq - (f[p] + weight * static_cast<double>(p * p))) / (2.0 * weight * static_cast<double>(q - p));
            if (s <= z[static_cast<std::size_t>(k)]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        if (k == 0) {
            z[0] = -kInf;
        } else {
            const auto p = v[static_cast<std::size_t>(k - 1)];
            z[static_cast<std::size_t>(k)] =
                (fq - (f[p] + weight * static_cast<double>(p * p))) / (2.0 * weight * static_cast<double>(q - p));
        }
        z[static_cast<std::size_t>(k + 1)] = kInf;
    }
    if (k < 0) {
        for (std::int64_t q = 0; q < n; ++q) d[q] = kInf;
        return;
    }
    std::int64_t j = 0;
    for (std::int64_t q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(j + 1)] < static_cast<double>(q)) ++j;
        const auto p = v[static_cast<std::size_t>(j)];
        d[q] = weight * static_cast<double>((q - p) * (q - p)) + f[p];
    }
}

}  // namespace

double dice(const LabelMap& y, const LabelMap& p) {
    check_pair(y, p);
    std::int64_t inter = 0, ny = 0, np = 0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        ny += y.data[i];
        np += p.data[i];
        inter += y.data[i] & p.data[i];
    }
    if (ny + np == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(ny + np);
}

std::vector<std::int64_t> boundary(const LabelMap& m) {
    std::vector<std::int64_t> out;
    const auto& e = m.shape;
    auto bg = [&](std::int64_t z, std::int64_t y, std::int64_t x) { return !m.contains(z, y, x) || m(z, y, x) == 0; };
    for (std::int64_t z = 0; z < e.d; ++z)
        for (std::int64_t y = 0; y < e.h; ++y)
            for (std::int64_t x = 0; x < e.w; ++x) {
                if (!m(z, y, x)) continue;
                if (bg(z - 1, y, x) || bg(z + 1, y, x) || bg(z, y - 1, x) || bg(z, y + 1, x) || bg(z, y, x - 1) ||
                    bg(z, y, x + 1))
                    out.push_back(static_cast<std::int64_t>(m.index(z, y, x)));
            }
    return out;
}

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& sites, Extent3 e, const Spacing& s) {
    std::vector<double> f(sites.size());
    for (std::size_t i = 0; i < sites.size(); ++i) f[i] = sites[i] ? 0.0 : kInf;
    std::vector<std::int64_t> v;
    std::vector<double> z;
    const auto n_max = std::max({e.d, e.h, e.w});
    std::vector<double> line(static_cast<std::size_t>(n_max)), out(static_cast<std::size_t>(n_max));
    // x lines
    for (std::int64_t zz = 0; zz < e.d; ++zz)
        for (std::int64_t y = 0; y < e.h; ++y) {
            double* row = f.data() + (zz * e.h + y) * e.w;
            transform_line(row, out.data(), e.w, s.x * s.x, v, z);
            std::copy(out.begin(), out.begin() + e.w, row);
        }
    // y lines
    for (std::int64_t zz = 0; zz < e.d; ++zz)
        for (std::int64_t x = 0; x < e.w; ++x) {
            for (std::int64_t y = 0; y < e.h; ++y) line[static_cast<std::size_t>(y)] = f[static_cast<std::size_t>((zz * e.h + y) * e.w + x)];
            transform_line(line.data(), out.data(), e.h, s.y * s.y, v, z);
            for (std::int64_t y = 0; y < e.h; ++y) f[static_cast<std::size_t>((zz * e.h + y) * e.w + x)] = out[static_cast<std::size_t>(y)];
        }
    // z lines
    for (std::int64_t y = 0; y < e.h; ++y)
        for (std::int64_t x = 0; x < e.w; ++x) {
            for (std::int64_t zz = 0; zz < e.d; ++zz) line[static_cast<std::size_t>(zz)] = f[static_cast<std::size_t>((zz * e.h + y) * e.w + x)];
            transform_line(line.data(), out.data(), e.d, s.z * s.z, v, z);
            for (std::int64_t zz = 0; zz < e.d; ++zz) f[static_cast<std::size_t>((zz * e.h + y) * e.w + x)] = out[static_cast<std::size_t>(zz)];
        }
    return f;
}

double mad(const LabelMap& y, const LabelMap& p, const Spacing& spacing) {
    check_pair(y, p);
    if (!spacing.positive()) throw std::invalid_argument("spacing must be positive");
    const auto by = boundary(y);
    const auto bp = boundary(p);
    if (by.empty() || bp.empty()) throw std::domain_error("MAD undefined: empty boundary");

    // Isotropic grids are transformed in voxel units, where every squared
    // distance is an exact integer, then scaled once.
    const bool iso = spacing.x == spacing.y && spacing.y == spacing.z;
    const Spacing unit = iso ? Spacing{} : spacing;
    const double scale = iso ? spacing.x : 1.0;
    auto mean_distance = [&](const std::vector<std::int64_t>& from, const std::vector<std::int64_t>& to) {
        std::vector<std::uint8_t> sites(y.data.size(), 0);
        for (auto i : to) sites[static_cast<std::size_t>(i)] = 1;
        const auto dt = squared_distance_transform(sites, y.shape, unit);
        double sum = 0;
        for (auto i : from) sum += std::sqrt(dt[static_cast<std::size_t>(i)]);
        return scale * sum / static_cast<double>(from.size());
    };
    return 0.5 * (mean_distance(bp, by) + mean_distance(by, bp));
}

double label_volume_cm3(const LabelMap& m, const Spacing& s) {
    std::int64_t n = 0;
    for (auto v : m.data) n += v;
    return static_cast<double>(n) * voxel_volume(s) / 1000.0;
}

VolumeDiffs volume_diffs(const LabelMap& y, const LabelMap& p, const Spacing& s) {
    check_pair(y, p);
    const double vy = label_volume_cm3(y, s);
    const double vp = label_volume_cm3(p, s);
    if (!(vy > 0)) throw std::domain_error("relative volume difference undefined for an empty reference");
    return {vy - vp, (vy - vp) / vy};
}

MetricRecord evaluate_case(const LabelMap& y, const LabelMap& p, const Spacing& s, const std::string& id, CaseClass tag) {
    MetricRecord r;
    r.case_id = id;
    r.tag = tag;
    r.dice = dice(y, p);
    try {
        r.mad_mm = mad(y, p, s);
    } catch (const std::domain_error&) {
        r.mad_mm = std::numeric_limits<double>::quiet_NaN();
    }
    const auto dv = volume_diffs(y, p, s);
    r.dVa_cm3 = dv.absolute_cm3;
    r.dVr = dv.relative;
    return r;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricRecord>& records) {
    const auto old = os.precision(17);
    os << "case_id,class,dice,mad_mm,dVa_cm3,dVr\n";
    for (const auto& r : records)
        os << r.case_id << ',' << to_string(r.tag) << ',' << r.dice << ',' << r.mad_mm << ',' << r.dVa_cm3 << ','
           << r.dVr << '\n';
    os.precision(old);
}

std::vector<MetricRecord> read_metrics_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "case_id,class,dice,mad_mm,dVa_cm3,dVr")
        throw std::runtime_error("unexpected metrics CSV header");
    std::vector<MetricRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> f;
        while (std::getline(ls, field, ',')) f.push_back(field);
        if (f.size() != 6) throw std::runtime_error("malformed metrics row: " + line);
        MetricRecord r;
        r.case_id = f[0];
        r.tag = case_class_from_string(f[1]);
        r.dice = std::stod(f[2]);
        r.mad_mm = f[3] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[3]);
        r.dVa_cm3 = std::stod(f[4]);
        r.dVr = std::stod(f[5]);
        out.push_back(r);
    }
    return out;
}

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd m;
    double sum = 0;
    for (double v : values)
        if (std::isfinite(v)) {
            sum += v;
            ++m.count;
        }
    if (m.count == 0) {
        m.mean = m.std = std::numeric_limits<double>::quiet_NaN();
        return m;
    }
    m.mean = sum / static_cast<double>(m.count);
    if (m.count > 1) {
        double sq = 0;
        for (double v : values)
            if (std::isfinite(v)) sq += (v - m.mean) * (v - m.mean);
        m.std = std::sqrt(sq / static_cast<double>(m.count - 1));
    }
    return m;
}

std::map<std::string, MetricSummary> aggregate(const std::vector<MetricRecord>& records, bool signed_volumes) {
    std::map<std::string, std::vector<const MetricRecord*>> groups;
    for (const auto& r : records) {
        groups[to_string(r.tag)].push_back(&r);
        groups["all"].push_back(&r);
    }
    std::map<std::string, MetricSummary> out;
    for (const auto& [key, rs] : groups) {
        std::vector<double> d, m, va, vr;
        for (const auto* r : rs) {
            d.push_back(r->dice);
            m.push_back(r->mad_mm);
            va.push_back(signed_volumes ? r->dVa_cm3 : std::abs(r->dVa_cm3));
            vr.push_back(signed_volumes ? r->dVr : std::abs(r->dVr));
        }
        out[key] = {mean_std(d), mean_std(m), mean_std(va), mean_std(vr)};
    }
    return out;
}

void write_summary_csv(std::ostream& os, const std::map<std::string, MetricSummary>& summary) {
    os << "group,n,dice_mean,dice_std,mad_mean,mad_std,dVa_mean,dVa_std,dVr_mean,dVr_std\n";
    for (const auto* key : {"normal", "dilated", "all"}) {
        const auto it = summary.find(key);
        if (it == summary.end()) continue;
        const auto& s = it->second;
        os << key << ',' << s.dice.count << ',' << s.dice.mean << ',' << s.dice.std << ',' << s.mad_mm.mean << ','
           << s.mad_mm.std << ',' << s.dVa_cm3.mean << ',' << s.dVa_cm3.std << ',' << s.dVr.mean << ',' << s.dVr.std
           << '\n';
    }
}

}  // namespace ventseg
