#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ventseg/tensor.hpp"

namespace ventseg {

// Physical voxel size in millimetres, (z, y, x).
struct Spacing {
    double z = 1.0;
    double y = 1.0;
    double x = 1.0;

    static Spacing isotropic(double s) { return {s, s, s}; }
    bool positive() const { return z > 0 && y > 0 && x > 0; }
    Spacing scaled(double f) const { return {z * f, y * f, x * f}; }
    bool operator==(const Spacing&) const = default;
};

// mm^3 per voxel.
double voxel_volume(const Spacing& spacing);

// Dense 3D grid in (slice z, row y, column x) order.
template <typename T>
struct Grid {
    Extent3 shape{0, 0, 0};
    Spacing spacing;
    std::vector<T> data;

    Grid() = default;
    Grid(Extent3 s, Spacing sp, T fill = T{})
        : shape(s), spacing(sp), data(static_cast<std::size_t>(s.voxels()), fill) {}

    std::size_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return static_cast<std::size_t>((z * shape.h + y) * shape.w + x);
    }
    T& operator()(std::int64_t z, std::int64_t y, std::int64_t x) { return data[index(z, y, x)]; }
    T operator()(std::int64_t z, std::int64_t y, std::int64_t x) const { return data[index(z, y, x)]; }
    bool contains(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return z >= 0 && y >= 0 && x >= 0 && z < shape.d && y < shape.h && x < shape.w;
    }
    std::size_t size() const { return data.size(); }
    bool operator==(const Grid&) const = default;
};

using Volume = Grid<float>;
using LabelMap = Grid<std::uint8_t>;

// Throws std::invalid_argument when a Volume holds non-finite values or has
// non-positive spacing.
void validate(const Volume& v);
// Throws when labels are not exactly binary or do not match `image`'s shape.
void validate(const LabelMap& labels, const Volume* image = nullptr);

enum class CaseClass { normal, dilated };
std::string to_string(CaseClass c);
CaseClass case_class_from_string(const std::string& s);

struct DatasetSplit {
    std::vector<std::string> training;
    std::vector<std::string> validation;
    std::vector<std::string> test;
    std::map<std::string, CaseClass> tags;

    // Disjoint lists, one tag per listed case.
    void validate() const;
};

struct PreprocessOptions {
    std::int64_t target_side = 96;
    // 2 reproduces the half-scale step; 1 disables resampling.
    int downscale = 2;
    bool per_slice = false;
};

struct Preprocessed {
    Volume image;
    std::optional<LabelMap> labels;
};

// Half-scale (cubic for images, nearest for labels), centre crop/pad to a
// cube of `target_side`, standardize to zero mean and unit variance.
Preprocessed preprocess(const Volume& raw, const LabelMap* raw_labels, const PreprocessOptions& options);

Volume downscale_cubic(const Volume& v);
LabelMap downscale_nearest(const LabelMap& labels);

// Window of `shape` starting at `origin`; regions outside the source are
// filled with `fill`. Negative origins pad at the front.
template <typename T>
Grid<T> extract_window(const Grid<T>& g, Extent3 origin, Extent3 shape, T fill = T{}) {
    Grid<T> out(shape, g.spacing, fill);
    for (std::int64_t z = 0; z < shape.d; ++z)
        for (std::int64_t y = 0; y < shape.h; ++y)
            for (std::int64_t x = 0; x < shape.w; ++x) {
                const auto sz = origin.d + z, sy = origin.h + y, sx = origin.w + x;
                if (g.contains(sz, sy, sx)) out(z, y, x) = g(sz, sy, sx);
            }
    return out;
}

// Centre crop/pad offset: index in the source of output index 0.
std::int64_t centre_offset(std::int64_t source, std::int64_t target);

// Standardize over the whole volume; throws "degenerate standardization"
// on zero variance.
void standardize(Volume& v);
void standardize_slices(Volume& v);

// Container: text header (magic, shape, spacing, dtype) then a raw
// little-endian payload.
void write_volume(const std::filesystem::path& path, const Volume& v);
void write_labels(const std::filesystem::path& path, const LabelMap& l);
Volume read_volume(const std::filesystem::path& path);
LabelMap read_labels(const std::filesystem::path& path);

// Minimal uncompressed NIfTI-1 (.nii) adapter: float32 images and uint8 labels.
void write_nifti(const std::filesystem::path& path, const Volume& v);
void write_nifti(const std::filesystem::path& path, const LabelMap& l);
Volume read_nifti_volume(const std::filesystem::path& path);
LabelMap read_nifti_labels(const std::filesystem::path& path);

// Dispatches on extension: ".nii" uses NIfTI, anything else the container.
Volume load_volume(const std::filesystem::path& path);
LabelMap load_labels(const std::filesystem::path& path);
void save(const std::filesystem::path& path, const Volume& v);
void save(const std::filesystem::path& path, const LabelMap& l);

}  // namespace ventseg

namespace ventseg {

// One labelled case of a dataset.
struct Case {
    std::string id;
    Volume image;
    LabelMap labels;
    CaseClass tag = CaseClass::normal;
};

}  // namespace ventseg
