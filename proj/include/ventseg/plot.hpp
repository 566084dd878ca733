#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ventseg/real.hpp"
#include "ventseg/stats.hpp"

namespace ventseg {

struct Series {
    std::string name;
    std::vector<double> x, y, err;
};

// Line chart with optional error bars, as standalone SVG text.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

// Train/test Dice against training-set size.
std::string sweep_svg(const std::vector<SweepPoint>& points);
std::string sweep_svg_from_csv(const std::string& csv);
// Test Dice against layer count, one curve per family and CPPN setting.
std::string ablation_svg(const AblationGrid& grid);
std::string ablation_svg_from_csv(const std::string& csv);

// 8-bit binary PGM, min-max scaled.
void write_pgm(const std::filesystem::path& path, std::span<const Real> values, std::int64_t height,
               std::int64_t width);

}  // namespace ventseg
