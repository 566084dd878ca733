#include "ventseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

namespace ventseg {

bool Ellipsoid::contains(double z, double y, double x) const {
    const double a = (z - centre[0]) / radii[0];
    const double b = (y - centre[1]) / radii[1];
    const double c = (x - centre[2]) / radii[2];
    return a * a + b * b + c * c <= 1.0;
}

void PhantomSpec::validate() const {
    if (side < 16) throw std::invalid_argument("phantom side must be >= 16");
    if (!(spacing() > 0)) throw std::invalid_argument("phantom spacing must be positive");
    if (target_cm3 < 0) throw std::invalid_argument("target volume must be >= 0");
    if (speckle.amplitude < 0 || speckle.correlation < 0) throw std::invalid_argument("invalid speckle parameters");
}

std::array<double, 2> class_volume_range(CaseClass tag) {
    return tag == CaseClass::normal ? std::array<double, 2>{1.9, 3.5} : std::array<double, 2>{7.6, 10.6};
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

struct Jitter {
    double tz = 0, ty = 0, tx = 0;
    double lobe_left = 1, lobe_right = 1;
    double lobe_offset = 6.0;
};

PhantomGeometry build_geometry(double s, const Jitter& j, double half_fov) {
    PhantomGeometry g;
    g.scale = s;
    auto at = [&](double z, double y, double x, double rz, double ry, double rx) {
        return Ellipsoid{{z * s + j.tz, y * s + j.ty, x * s + j.tx}, {rz * s, ry * s, rx * s}};
    };
    const double a = j.lobe_offset;
    for (int side : {-1, 1}) {
        const double k = side < 0 ? j.lobe_left : j.lobe_right;
        g.target.push_back(at(0, side * a, 3, 20 * k, 3.5 * k, 5 * k));  // lateral horn
        g.target.push_back(at(13, side * (a + 2), -3, 7, 2.2, 5));       // temporal horn
        g.plexus.push_back(at(4, side * (a + 0.5), 2.5, 10 * k, 1.8, 2.4));
    }
    g.target.push_back(at(0, 0, 0.5, 9, 3.0, 3.0));  // third ventricle bridge

    const double r = half_fov;
    g.skull_outer = {{0, 0, 0}, {0.9 * r, 0.82 * r, 0.86 * r}};
    const double t = std::max(3.0, 0.07 * r);
    g.skull_inner = {{0, 0, 0}, {0.9 * r - t, 0.82 * r - t, 0.86 * r - t}};
    const double top = 8 * s + j.tx;
    g.csp = {{-2 * s + j.tz, j.ty, top + 2.5 + 5}, {16, 3.2, 5}};
    return g;
}

bool in_target(const PhantomGeometry& g, double z, double y, double x) {
    for (const auto& e : g.target)
        if (e.contains(z, y, x)) return true;
    return false;
}

double position(std::int64_t i, std::int64_t n, double spacing) {
    return (static_cast<double>(i) - 0.5 * static_cast<double>(n - 1)) * spacing;
}

// Voxel index range [lo, hi) covering the bounding boxes of `es`.
std::array<std::int64_t, 6> bounds(const std::vector<Ellipsoid>& es, std::int64_t n, double sp) {
    std::array<std::int64_t, 6> b{n, 0, n, 0, n, 0};
    for (const auto& e : es)
        for (int ax = 0; ax < 3; ++ax) {
            const double lo = (e.centre[ax] - e.radii[ax]) / sp + 0.5 * static_cast<double>(n - 1);
            const double hi = (e.centre[ax] + e.radii[ax]) / sp + 0.5 * static_cast<double>(n - 1);
            b[2 * ax] = std::min(b[2 * ax], std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(lo))));
            b[2 * ax + 1] = std::max(b[2 * ax + 1], std::min<std::int64_t>(n, static_cast<std::int64_t>(std::ceil(hi)) + 1));
        }
    return b;
}

std::int64_t count_target(const PhantomGeometry& g, std::int64_t n, double sp) {
    const auto b = bounds(g.target, n, sp);
    std::int64_t count = 0;
    for (auto z = b[0]; z < b[1]; ++z)
        for (auto y = b[2]; y < b[3]; ++y)
            for (auto x = b[4]; x < b[5]; ++x)
                count += in_target(g, position(z, n, sp), position(y, n, sp), position(x, n, sp));
    return count;
}

bool inside(const Ellipsoid& outer, const Ellipsoid& e) {
    for (int dz : {-1, 1})
        for (int dy : {-1, 1})
            for (int dx : {-1, 1})
                if (!outer.contains(e.centre[0] + dz * e.radii[0], e.centre[1] + dy * e.radii[1],
                                    e.centre[2] + dx * e.radii[2]))
                    return false;
    return true;
}

void gaussian_blur(std::vector<double>& f, std::int64_t n, double sigma) {
    if (sigma <= 0) return;
    const auto r = static_cast<std::int64_t>(std::ceil(3 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0;
    for (std::int64_t i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;
    std::vector<double> line(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n));
    const std::int64_t strides[3] = {n * n, n, 1};
    for (int ax = 0; ax < 3; ++ax) {
        const auto st = strides[ax];
        for (std::int64_t p = 0; p < n * n; ++p) {
            // base index of the line: the two other coordinates enumerate p
            std::int64_t base;
            if (ax == 0) base = p;
            else if (ax == 1) base = (p / n) * n * n + (p % n);
            else base = p * n;
            for (std::int64_t i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = f[static_cast<std::size_t>(base + i * st)];
            for (std::int64_t i = 0; i < n; ++i) {
                double acc = 0;
                for (std::int64_t t = -r; t <= r; ++t) {
                    const auto q = std::clamp<std::int64_t>(i + t, 0, n - 1);
                    acc += k[static_cast<std::size_t>(t + r)] * line[static_cast<std::size_t>(q)];
                }
                out[static_cast<std::size_t>(i)] = acc;
            }
            for (std::int64_t i = 0; i < n; ++i) f[static_cast<std::size_t>(base + i * st)] = out[static_cast<std::size_t>(i)];
        }
    }
}

}  // namespace

PhantomCase generate_case(const PhantomSpec& spec) {
    spec.validate();
    const auto n = spec.side;
    const double sp = spec.spacing();
    const double half_fov = 0.5 * static_cast<double>(n) * sp;
    std::mt19937_64 rng(spec.seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    const auto range = class_volume_range(spec.tag);
    const double target = spec.target_cm3 > 0 ? spec.target_cm3 : uni(range[0], range[1]);
    Jitter j;
    j.tz = uni(-3, 3) * half_fov / 48;
    j.tx = uni(-3, 3) * half_fov / 48;
    j.ty = uni(-0.5, 0.5) * half_fov / 48;
    j.lobe_left = uni(0.95, 1.05);
    j.lobe_right = uni(0.95, 1.05);
    Intensities in = spec.intensity;
    in.tissue *= uni(0.94, 1.06);
    in.csf *= uni(0.9, 1.1);
    in.plexus *= uni(0.94, 1.06);

    // Geometry scale is tied to the field of view; bisect it to the target volume.
    const double unit = half_fov / 48;
    const double vv = voxel_volume(Spacing::isotropic(sp)) / 1000.0;
    auto volume_at = [&](double s) { return static_cast<double>(count_target(build_geometry(s * unit, j, half_fov), n, sp)) * vv; };
    double lo = 0.2, hi = 2.5;
    if (volume_at(hi) < target) throw std::invalid_argument("infeasible phantom geometry: target volume too large");
    double s = 1;
    for (int it = 0; it < 60; ++it) {
        s = 0.5 * (lo + hi);
        const double v = volume_at(s);
        if (std::abs(v - target) <= 0.005 * target) break;
        (v < target ? lo : hi) = s;
    }
    PhantomCase out;
    out.tag = spec.tag;
    out.geometry = build_geometry(s * unit, j, half_fov);
    auto& g = out.geometry;
    g.target_cm3 = target;
    for (const auto& e : g.target)
        if (!inside(g.skull_inner, e)) throw std::invalid_argument("infeasible phantom geometry: target leaves the skull");
    if (spec.csp && !inside(g.skull_inner, g.csp)) throw std::invalid_argument("infeasible phantom geometry: CSP leaves the skull");

    const Extent3 shape{n, n, n};
    const auto spacing = Spacing::isotropic(sp);
    out.labels = LabelMap(shape, spacing, 0);
    out.decoys = LabelMap(shape, spacing, 0);
    std::vector<double> tmpl(static_cast<std::size_t>(shape.voxels()));
    for (std::int64_t z = 0; z < n; ++z)
        for (std::int64_t y = 0; y < n; ++y)
            for (std::int64_t x = 0; x < n; ++x) {
                const double pz = position(z, n, sp), py = position(y, n, sp), px = position(x, n, sp);
                const auto idx = out.labels.index(z, y, x);
                double v = in.outside;
                if (g.skull_outer.contains(pz, py, px)) {
                    if (!g.skull_inner.contains(pz, py, px)) {
                        if (spec.skull) {
                            v = in.skull;
                            out.decoys.data[idx] = 1;
                        } else {
                            v = in.tissue;
                        }
                    } else {
                        v = in.tissue;
                    }
                }
                if (spec.csp && g.csp.contains(pz, py, px)) {
                    v = in.csf;
                    out.decoys.data[idx] = 1;
                }
                if (in_target(g, pz, py, px)) {
                    if (out.decoys.data[idx]) throw std::invalid_argument("infeasible phantom geometry: decoy overlaps target");
                    out.labels.data[idx] = 1;
                    v = in.csf;
                    for (const auto& p : g.plexus)
                        if (p.contains(pz, py, px)) v = in.plexus;
                }
                tmpl[idx] = v;
            }
    const double realized =
        static_cast<double>(std::count(out.labels.data.begin(), out.labels.data.end(), std::uint8_t{1})) * vv;
    if (std::abs(realized - target) > 0.1 * target)
        throw std::invalid_argument("infeasible phantom geometry: cannot realize the target volume at this resolution");

    out.image = Volume(shape, spacing, 0);
    if (spec.speckle.amplitude > 0) {
        std::vector<double> speckle(tmpl.size());
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (auto& v : speckle) v = std::sqrt(-2.0 * std::log(1.0 - u(rng)));
        gaussian_blur(speckle, n, spec.speckle.correlation);
        double mean = 0;
        for (double v : speckle) mean += v;
        mean /= static_cast<double>(speckle.size());
        for (std::size_t i = 0; i < tmpl.size(); ++i)
            out.image.data[i] = static_cast<float>(tmpl[i] * (1.0 + spec.speckle.amplitude * (speckle[i] / mean - 1.0)));
    } else {
        for (std::size_t i = 0; i < tmpl.size(); ++i) out.image.data[i] = static_cast<float>(tmpl[i]);
    }
    return out;
}

std::int64_t DatasetProfile::total() const {
    std::int64_t t = 0;
    for (const auto* a : {&training, &validation, &test}) {
        if ((*a)[0] < 0 || (*a)[1] < 0) throw std::invalid_argument("case counts must be >= 0");
        t += (*a)[0] + (*a)[1];
    }
    return t;
}

const Case& Dataset::find(const std::string& id) const {
    for (const auto& c : cases)
        if (c.id == id) return c;
    throw std::out_of_range("no case " + id);
}

std::vector<Case> Dataset::select(const std::vector<std::string>& ids) const {
    std::vector<Case> out;
    for (const auto& id : ids) out.push_back(find(id));
    return out;
}

namespace {

Case make_case(std::size_t index, CaseClass tag, std::uint64_t seed, const PhantomSpec& base) {
    PhantomSpec spec = base;
    spec.tag = tag;
    spec.seed = derive_seed(seed, index);
    auto pc = generate_case(spec);
    standardize(pc.image);
    char id[32];
    std::snprintf(id, sizeof id, "case%03zu", index);
    return {id, std::move(pc.image), std::move(pc.labels), tag};
}

}  // namespace

Dataset generate_dataset(const DatasetProfile& profile, std::uint64_t seed, const PhantomSpec& base) {
    profile.total();
    Dataset ds;
    std::vector<std::string>* lists[3] = {&ds.split.training, &ds.split.validation, &ds.split.test};
    const std::array<std::int64_t, 2>* counts[3] = {&profile.training, &profile.validation, &profile.test};
    for (int s = 0; s < 3; ++s)
        for (int cls = 0; cls < 2; ++cls)
            for (std::int64_t k = 0; k < (*counts[s])[static_cast<std::size_t>(cls)]; ++k) {
                const auto tag = cls == 0 ? CaseClass::normal : CaseClass::dilated;
                auto c = make_case(ds.cases.size(), tag, seed, base);
                lists[s]->push_back(c.id);
                ds.split.tags[c.id] = tag;
                ds.cases.push_back(std::move(c));
            }
    ds.split.validate();
    return ds;
}

Dataset generate_folds(std::int64_t folds, std::int64_t dilated_per_fold, std::int64_t normal_per_fold,
                       std::uint64_t seed, const PhantomSpec& base, std::array<std::int64_t, 2> validation) {
    if (folds < 1 || dilated_per_fold < 0 || normal_per_fold < 0) throw std::invalid_argument("invalid fold profile");
    Dataset ds;
    for (std::int64_t f = 0; f < folds; ++f) {
        auto& fold = ds.folds.emplace_back();
        for (std::int64_t k = 0; k < dilated_per_fold + normal_per_fold; ++k) {
            const auto tag = k < dilated_per_fold ? CaseClass::dilated : CaseClass::normal;
            auto c = make_case(ds.cases.size(), tag, seed, base);
            fold.push_back(c.id);
            ds.split.training.push_back(c.id);
            ds.split.tags[c.id] = tag;
            ds.cases.push_back(std::move(c));
        }
    }
    for (int cls = 0; cls < 2; ++cls)
        for (std::int64_t k = 0; k < validation[static_cast<std::size_t>(cls)]; ++k) {
            const auto tag = cls == 0 ? CaseClass::normal : CaseClass::dilated;
            auto c = make_case(ds.cases.size(), tag, seed, base);
            ds.split.validation.push_back(c.id);
            ds.split.tags[c.id] = tag;
            ds.cases.push_back(std::move(c));
        }
    ds.split.validate();
    return ds;
}

nlohmann::json split_to_json(const Dataset& ds) {
    nlohmann::json j;
    j["training"] = ds.split.training;
    j["validation"] = ds.split.validation;
    j["test"] = ds.split.test;
    nlohmann::json tags = nlohmann::json::object();
    for (const auto& [id, t] : ds.split.tags) tags[id] = to_string(t);
    j["tags"] = tags;
    j["folds"] = ds.folds;
    return j;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    for (const auto& c : ds.cases) {
        write_volume(dir / (c.id + "_image.vsv"), c.image);
        write_labels(dir / (c.id + "_labels.vsv"), c.labels);
    }
    std::ofstream os(dir / "split.json");
    os << split_to_json(ds).dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write " + (dir / "split.json").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "split.json");
    if (!is) throw std::runtime_error("cannot open " + (dir / "split.json").string());
    const auto j = nlohmann::json::parse(is);
    Dataset ds;
    ds.split.training = j.at("training").get<std::vector<std::string>>();
    ds.split.validation = j.at("validation").get<std::vector<std::string>>();
    ds.split.test = j.at("test").get<std::vector<std::string>>();
    for (const auto& [id, t] : j.at("tags").items()) ds.split.tags[id] = case_class_from_string(t.get<std::string>());
    if (j.contains("folds")) ds.folds = j["folds"].get<std::vector<std::vector<std::string>>>();
    ds.split.validate();
    for (const auto& [id, tag] : ds.split.tags) {
        Case c{id, load_volume(dir / (id + "_image.vsv")), load_labels(dir / (id + "_labels.vsv")), tag};
        validate(c.labels, &c.image);
        ds.cases.push_back(std::move(c));
    }
    return ds;
}

}  // namespace ventseg
