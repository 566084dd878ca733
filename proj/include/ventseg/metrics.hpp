#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ventseg/grid.hpp"

namespace ventseg {

// 2|Y n P| / (|Y| + |P|); two empty masks score 1.
double dice(const LabelMap& reference, const LabelMap& prediction);

// Raster-ordered linear indices of foreground voxels with at least one
// background 6-neighbour; voxels outside the grid count as background.
std::vector<std::int64_t> boundary(const LabelMap& mask);

// Squared Euclidean distance from every voxel to the nearest site, with
// per-axis weights (squared spacings). Exact separable transform.
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& sites, Extent3 shape,
                                               const Spacing& spacing);

// Symmetric mean boundary distance in millimetres. Throws std::domain_error
// ("MAD undefined") when either boundary is empty.
double mad(const LabelMap& reference, const LabelMap& prediction, const Spacing& spacing);

struct VolumeDiffs {
    double absolute_cm3 = 0;  // V_ref - V_pred
    double relative = 0;      // absolute / V_ref
};

// Throws std::domain_error when the reference is empty.
VolumeDiffs volume_diffs(const LabelMap& reference, const LabelMap& prediction, const Spacing& spacing);
// Foreground volume in cm^3.
double label_volume_cm3(const LabelMap& mask, const Spacing& spacing);

struct MetricRecord {
    std::string case_id;
    CaseClass tag = CaseClass::normal;
    double dice = 0;
    double mad_mm = 0;  // NaN when a boundary is empty
    double dVa_cm3 = 0;
    double dVr = 0;
};

MetricRecord evaluate_case(const LabelMap& reference, const LabelMap& prediction, const Spacing& spacing,
                           const std::string& case_id, CaseClass tag);

void write_metrics_csv(std::ostream& os, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_metrics_csv(std::istream& is);

struct MeanStd {
    double mean = 0;
    double std = 0;  // sample standard deviation; 0 for a single value
    std::size_t count = 0;
};

// Mean and sample std over the finite entries of `values`.
MeanStd mean_std(const std::vector<double>& values);

struct MetricSummary {
    MeanStd dice, mad_mm, dVa_cm3, dVr;
};

// Summaries keyed "normal", "dilated" and "all". Volume differences are
// aggregated as absolute values unless `signed_volumes` is set.
std::map<std::string, MetricSummary> aggregate(const std::vector<MetricRecord>& records, bool signed_volumes = false);
void write_summary_csv(std::ostream& os, const std::map<std::string, MetricSummary>& summary);

}  // namespace ventseg
