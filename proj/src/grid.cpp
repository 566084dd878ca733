#include "ventseg/grid.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace ventseg {

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

double voxel_volume(const Spacing& s) {
    if (!s.positive()) throw std::invalid_argument("spacing must be positive");
    return s.z * s.y * s.x;
}

void validate(const Volume& v) {
    if (!v.spacing.positive()) throw std::invalid_argument("volume spacing must be positive");
    if (v.data.size() != static_cast<std::size_t>(v.shape.voxels()))
        throw std::invalid_argument("volume payload does not match shape");
    for (float x : v.data)
        if (!std::isfinite(x)) throw std::invalid_argument("volume contains non-finite values");
}

void validate(const LabelMap& labels, const Volume* image) {
    if (labels.data.size() != static_cast<std::size_t>(labels.shape.voxels()))
        throw std::invalid_argument("label payload does not match shape");
    for (auto v : labels.data)
        if (v > 1) throw std::invalid_argument("label map is not binary");
    if (image && !(image->shape == labels.shape))
        throw std::invalid_argument("label shape " + to_string(labels.shape) + " differs from image shape " +
                                    to_string(image->shape));
}

std::string to_string(CaseClass c) { return c == CaseClass::normal ? "normal" : "dilated"; }

CaseClass case_class_from_string(const std::string& s) {
    if (s == "normal") return CaseClass::normal;
    if (s == "dilated") return CaseClass::dilated;
    throw std::invalid_argument("unknown class tag '" + s + "'");
}

void DatasetSplit::validate() const {
    std::set<std::string> seen;
    for (const auto* list : {&training, &validation, &test})
        for (const auto& id : *list) {
            if (!seen.insert(id).second) throw std::invalid_argument("case '" + id + "' appears in two splits");
            if (!tags.contains(id)) throw std::invalid_argument("case '" + id + "' has no class tag");
        }
}

namespace {

// Cubic convolution (a = -0.5) sampled at the midpoint between two voxels.
constexpr std::array<double, 4> kHalfCubic{-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0};

// Downscale one axis by two. `stride` walks along the axis, `count` is the
// source length, `lines` enumerates starting offsets of every line.
std::vector<float> halve_axis(const std::vector<float>& src, Extent3 in, int axis) {
    Extent3 out = in;
    if (axis == 0) out.d /= 2;
    if (axis == 1) out.h /= 2;
    if (axis == 2) out.w /= 2;
    std::vector<float> dst(static_cast<std::size_t>(out.voxels()));
    const auto n = axis == 0 ? in.d : axis == 1 ? in.h : in.w;
    for (std::int64_t z = 0; z < out.d; ++z)
        for (std::int64_t y = 0; y < out.h; ++y)
            for (std::int64_t x = 0; x < out.w; ++x) {
                const std::int64_t o = axis == 0 ? z : axis == 1 ? y : x;
                double acc = 0;
                for (int t = 0; t < 4; ++t) {
                    const auto j = std::clamp<std::int64_t>(2 * o - 1 + t, 0, n - 1);
                    const auto sz = axis == 0 ? j : z, sy = axis == 1 ? j : y, sx = axis == 2 ? j : x;
                    acc += kHalfCubic[static_cast<std::size_t>(t)] *
                           src[static_cast<std::size_t>((sz * in.h + sy) * in.w + sx)];
                }
                dst[static_cast<std::size_t>((z * out.h + y) * out.w + x)] = static_cast<float>(acc);
            }
    return dst;
}

}  // namespace

Volume downscale_cubic(const Volume& v) {
    if (v.shape.d < 2 || v.shape.h < 2 || v.shape.w < 2) throw std::invalid_argument("volume too small to halve");
    std::vector<float> buf = v.data;
    Extent3 e = v.shape;
    for (int axis = 0; axis < 3; ++axis) {
        buf = halve_axis(buf, e, axis);
        if (axis == 0) e.d /= 2;
        if (axis == 1) e.h /= 2;
        if (axis == 2) e.w /= 2;
    }
    Volume out;
    out.shape = e;
    out.spacing = v.spacing.scaled(2.0);
    out.data = std::move(buf);
    return out;
}

LabelMap downscale_nearest(const LabelMap& labels) {
    const Extent3 e{labels.shape.d / 2, labels.shape.h / 2, labels.shape.w / 2};
    LabelMap out(e, labels.spacing.scaled(2.0));
    for (std::int64_t z = 0; z < e.d; ++z)
        for (std::int64_t y = 0; y < e.h; ++y)
            for (std::int64_t x = 0; x < e.w; ++x) out(z, y, x) = labels(2 * z, 2 * y, 2 * x);
    return out;
}

std::int64_t centre_offset(std::int64_t source, std::int64_t target) {
    // Floor division keeps padding symmetric up to one voxel either way.
    const auto diff = source - target;
    return diff >= 0 ? diff / 2 : -((-diff) / 2);
}

namespace {

void standardize_range(float* p, std::size_t n, bool throw_on_constant) {
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) sum += p[i];
    const double mean = sum / static_cast<double>(n);
    double sq = 0;
    for (std::size_t i = 0; i < n; ++i) sq += (p[i] - mean) * (p[i] - mean);
    const double var = sq / static_cast<double>(n);
    if (!(var > 0)) {
        if (throw_on_constant) throw std::domain_error("degenerate standardization");
        std::fill(p, p + n, 0.0f);
        return;
    }
    const double inv = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<float>((p[i] - mean) * inv);
}

}  // namespace

void standardize(Volume& v) { standardize_range(v.data.data(), v.data.size(), true); }

void standardize_slices(Volume& v) {
    // Whole-volume degeneracy is still an error; a constant slice maps to 0.
    if (std::all_of(v.data.begin(), v.data.end(), [&](float x) { return x == v.data.front(); }))
        throw std::domain_error("degenerate standardization");
    const auto plane = static_cast<std::size_t>(v.shape.h * v.shape.w);
    for (std::int64_t z = 0; z < v.shape.d; ++z) standardize_range(v.data.data() + z * plane, plane, false);
}

Preprocessed preprocess(const Volume& raw, const LabelMap* raw_labels, const PreprocessOptions& opt) {
    validate(raw);
    if (raw_labels) validate(*raw_labels, &raw);
    if (opt.target_side < 8) throw std::invalid_argument("target_side must be at least 8");
    if (opt.downscale != 1 && opt.downscale != 2) throw std::invalid_argument("downscale must be 1 or 2");

    Volume img = opt.downscale == 2 ? downscale_cubic(raw) : raw;
    std::optional<LabelMap> lab;
    if (raw_labels) lab = opt.downscale == 2 ? downscale_nearest(*raw_labels) : *raw_labels;

    // Crop first so padding does not enter the statistics; pad with the
    // content mean, which standardizes to exactly the new mean (0).
    const auto side = opt.target_side;
    const Extent3 origin{centre_offset(img.shape.d, side), centre_offset(img.shape.h, side),
                         centre_offset(img.shape.w, side)};
    const Extent3 crop_origin{std::max<std::int64_t>(origin.d, 0), std::max<std::int64_t>(origin.h, 0),
                              std::max<std::int64_t>(origin.w, 0)};
    const Extent3 crop_shape{std::min(side, img.shape.d), std::min(side, img.shape.h), std::min(side, img.shape.w)};
    Volume content = extract_window(img, crop_origin, crop_shape);

    double sum = 0;
    for (float x : content.data) sum += x;
    const auto mean = static_cast<float>(sum / static_cast<double>(content.data.size()));
    const Extent3 pad_origin{std::min<std::int64_t>(origin.d, 0), std::min<std::int64_t>(origin.h, 0),
                             std::min<std::int64_t>(origin.w, 0)};
    const Extent3 cube{side, side, side};

    Preprocessed out;
    if (opt.per_slice) {
        // Per-slice mode standardizes the content region only.
        standardize_slices(content);
        out.image = extract_window(content, pad_origin, cube, 0.0f);
    } else {
        out.image = extract_window(content, pad_origin, cube, mean);
        standardize(out.image);
    }
    if (lab) {
        LabelMap cropped = extract_window(*lab, crop_origin, crop_shape, std::uint8_t{0});
        out.labels = extract_window(cropped, pad_origin, cube, std::uint8_t{0});
    }
    return out;
}

namespace {

template <typename T>
void write_container(const std::filesystem::path& path, const Grid<T>& g, const char* dtype) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.precision(17);
    os << "VSVOL 1\n"
       << "shape " << g.shape.d << ' ' << g.shape.h << ' ' << g.shape.w << '\n'
       << "spacing " << g.spacing.z << ' ' << g.spacing.y << ' ' << g.spacing.x << '\n'
       << "dtype " << dtype << '\n'
       << "data\n";
    os.write(reinterpret_cast<const char*>(g.data.data()), static_cast<std::streamsize>(g.data.size() * sizeof(T)));
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

template <typename T>
Grid<T> read_container(const std::filesystem::path& path, const std::string& expected_dtype) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    if (line != "VSVOL 1") throw std::runtime_error(path.string() + ": not a volume container");
    Grid<T> g;
    std::string dtype;
    bool have_shape = false;
    while (std::getline(is, line) && line != "data") {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "shape") {
            ls >> g.shape.d >> g.shape.h >> g.shape.w;
            have_shape = true;
        } else if (key == "spacing") {
            ls >> g.spacing.z >> g.spacing.y >> g.spacing.x;
        } else if (key == "dtype") {
            ls >> dtype;
        }
        if (!ls) throw std::runtime_error(path.string() + ": malformed header line '" + line + "'");
    }
    if (!have_shape || line != "data") throw std::runtime_error(path.string() + ": incomplete header");
    if (dtype != expected_dtype)
        throw std::runtime_error(path.string() + ": dtype " + dtype + ", expected " + expected_dtype);
    g.data.resize(static_cast<std::size_t>(g.shape.voxels()));
    is.read(reinterpret_cast<char*>(g.data.data()), static_cast<std::streamsize>(g.data.size() * sizeof(T)));
    if (!is) throw std::runtime_error(path.string() + ": truncated payload");
    return g;
}

constexpr std::int16_t kNiftiUint8 = 2;
constexpr std::int16_t kNiftiFloat32 = 16;

template <typename T>
void write_nifti_impl(const std::filesystem::path& path, const Grid<T>& g, std::int16_t datatype) {
    std::array<char, 352> hdr{};
    auto put = [&](std::size_t off, auto value) { std::memcpy(hdr.data() + off, &value, sizeof(value)); };
    put(0, std::int32_t{348});
    const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(g.shape.w), static_cast<std::int16_t>(g.shape.h),
                                          static_cast<std::int16_t>(g.shape.d), 1, 1, 1, 1};
    for (std::size_t i = 0; i < 8; ++i) put(40 + 2 * i, dim[i]);
    put(70, datatype);
    put(72, static_cast<std::int16_t>(8 * sizeof(T)));
    const std::array<float, 8> pixdim{1.0f, static_cast<float>(g.spacing.x), static_cast<float>(g.spacing.y),
                                      static_cast<float>(g.spacing.z), 0, 0, 0, 0};
    for (std::size_t i = 0; i < 8; ++i) put(76 + 4 * i, pixdim[i]);
    put(108, 352.0f);
    put(112, 1.0f);
    hdr[123] = 2;  // millimetres
    std::memcpy(hdr.data() + 344, "n+1", 4);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    os.write(reinterpret_cast<const char*>(g.data.data()), static_cast<std::streamsize>(g.data.size() * sizeof(T)));
}

template <typename T>
Grid<T> read_nifti_impl(const std::filesystem::path& path, std::int16_t datatype) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::array<char, 348> hdr{};
    is.read(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    auto get = [&]<typename V>(std::size_t off, V) {
        V v;
        std::memcpy(&v, hdr.data() + off, sizeof(V));
        return v;
    };
    if (!is || get(0, std::int32_t{}) != 348 || std::memcmp(hdr.data() + 344, "n+1", 4) != 0)
        throw std::runtime_error(path.string() + ": not a single-file NIfTI-1 image");
    if (get(70, std::int16_t{}) != datatype) throw std::runtime_error(path.string() + ": unsupported NIfTI datatype");
    Grid<T> g;
    g.shape = {get(46, std::int16_t{}), get(44, std::int16_t{}), get(42, std::int16_t{})};
    g.spacing = {get(88, float{}), get(84, float{}), get(80, float{})};
    const auto offset = static_cast<std::streamoff>(get(108, float{}));
    g.data.resize(static_cast<std::size_t>(g.shape.voxels()));
    is.seekg(offset);
    is.read(reinterpret_cast<char*>(g.data.data()), static_cast<std::streamsize>(g.data.size() * sizeof(T)));
    if (!is) throw std::runtime_error(path.string() + ": truncated payload");
    return g;
}

bool is_nifti(const std::filesystem::path& p) { return p.extension() == ".nii"; }

}  // namespace

void write_volume(const std::filesystem::path& path, const Volume& v) { write_container(path, v, "float32"); }
void write_labels(const std::filesystem::path& path, const LabelMap& l) { write_container(path, l, "uint8"); }
Volume read_volume(const std::filesystem::path& path) { return read_container<float>(path, "float32"); }
LabelMap read_labels(const std::filesystem::path& path) {
    auto l = read_container<std::uint8_t>(path, "uint8");
    validate(l);
    return l;
}

void write_nifti(const std::filesystem::path& path, const Volume& v) { write_nifti_impl(path, v, kNiftiFloat32); }
void write_nifti(const std::filesystem::path& path, const LabelMap& l) { write_nifti_impl(path, l, kNiftiUint8); }
Volume read_nifti_volume(const std::filesystem::path& path) { return read_nifti_impl<float>(path, kNiftiFloat32); }
LabelMap read_nifti_labels(const std::filesystem::path& path) {
    auto l = read_nifti_impl<std::uint8_t>(path, kNiftiUint8);
    validate(l);
    return l;
}

Volume load_volume(const std::filesystem::path& p) { return is_nifti(p) ? read_nifti_volume(p) : read_volume(p); }
LabelMap load_labels(const std::filesystem::path& p) { return is_nifti(p) ? read_nifti_labels(p) : read_labels(p); }
void save(const std::filesystem::path& p, const Volume& v) { is_nifti(p) ? write_nifti(p, v) : write_volume(p, v); }
void save(const std::filesystem::path& p, const LabelMap& l) { is_nifti(p) ? write_nifti(p, l) : write_labels(p, l); }

}  // namespace ventseg
