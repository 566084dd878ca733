#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ventseg/grid.hpp"

namespace ventseg {

struct Ellipsoid {
    std::array<double, 3> centre{};  // (z, y, x) mm from the volume centre
    std::array<double, 3> radii{};
    bool contains(double z, double y, double x) const;
};

struct SpeckleOptions {
    // 0 leaves the piecewise template untouched.
    double amplitude = 0.6;
    // Gaussian low-pass sigma in voxels.
    double correlation = 0.8;
};

struct Intensities {
    double outside = 0.35;
    double tissue = 0.5;
    double csf = 0.12;
    double plexus = 0.9;
    double skull = 1.0;
};

struct PhantomSpec {
    std::int64_t side = 96;
    // Defaults to 0.3 * 320 / side: a 96 mm field of view.
    double spacing_mm = 0;
    CaseClass tag = CaseClass::normal;
    // 0 draws from the class range.
    double target_cm3 = 0;
    bool skull = true;
    bool csp = true;
    SpeckleOptions speckle;
    Intensities intensity;
    std::uint64_t seed = 1;

    double spacing() const { return spacing_mm > 0 ? spacing_mm : 0.3 * 320.0 / static_cast<double>(side); }
    void validate() const;
};

// Target volume range used when PhantomSpec::target_cm3 is 0.
std::array<double, 2> class_volume_range(CaseClass tag);

struct PhantomGeometry {
    double target_cm3 = 0;
    double scale = 1;
    std::vector<Ellipsoid> target;  // union is the label
    std::vector<Ellipsoid> plexus;  // hyperechoic part, clipped to the target
    Ellipsoid skull_outer, skull_inner;
    Ellipsoid csp;
};

struct PhantomCase {
    Volume image;
    LabelMap labels;
    CaseClass tag = CaseClass::normal;
    PhantomGeometry geometry;
    // Decoy voxels (skull shell and CSP slab); never overlap the labels.
    LabelMap decoys;
};

// Throws std::invalid_argument when the geometry does not fit the volume.
PhantomCase generate_case(const PhantomSpec& spec);

struct DatasetProfile {
    std::array<std::int64_t, 2> training{9, 4};  // {normal, dilated}
    std::array<std::int64_t, 2> validation{3, 2};
    std::array<std::int64_t, 2> test{5, 2};

    std::int64_t total() const;
};

struct Dataset {
    std::vector<Case> cases;
    DatasetSplit split;
    std::vector<std::vector<std::string>> folds;

    const Case& find(const std::string& id) const;
    std::vector<Case> select(const std::vector<std::string>& ids) const;
};

// `base` supplies side, spacing, decoys and speckle; tags and seeds are set
// per case.
Dataset generate_dataset(const DatasetProfile& profile, std::uint64_t seed, const PhantomSpec& base = {});
// `folds` folds of {dilated, normal} cases each, all listed as training in
// the split, plus a fixed validation set of {normal, dilated} cases.
Dataset generate_folds(std::int64_t folds, std::int64_t dilated_per_fold, std::int64_t normal_per_fold,
                       std::uint64_t seed, const PhantomSpec& base = {},
                       std::array<std::int64_t, 2> validation = {0, 0});

// <dir>/<id>_image.vsv, <dir>/<id>_labels.vsv and <dir>/split.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

nlohmann::json split_to_json(const Dataset& dataset);

// Per-case seed derived from a dataset seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace ventseg
