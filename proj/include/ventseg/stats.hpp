#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ventseg/metrics.hpp"
#include "ventseg/nets.hpp"
#include "ventseg/train.hpp"

namespace ventseg {

struct TTest {
    double t = 0;
    double df = 0;
    double p = 1;
    // Both samples have zero variance but different means; p is reported as 0.
    bool degenerate = false;
};

// Two-sided two-sample Student's t-test with pooled variance.
TTest ttest_pooled(std::span<const double> a, std::span<const double> b);
double ttest(std::span<const double> a, std::span<const double> b);

using Segmenter = std::function<LabelMap(const Case&)>;

struct TrainedRun {
    double validation_dice = 0;
    Segmenter segment;
    std::optional<TrainHistory> history;
    std::shared_ptr<Network> network;
};

using Trainer = std::function<TrainedRun(const std::vector<Case>& training, const std::vector<Case>& validation,
                                         std::uint64_t seed)>;

struct RunRecord {
    std::int64_t run = 0;
    std::uint64_t seed = 0;
    double validation_dice = 0;
    double test_dice = 0;  // mean over test cases
    double test_mad = 0;   // mean over cases with a defined MAD
    std::vector<MetricRecord> records;
    std::shared_ptr<Network> network;
};

struct RunSet {
    std::string experiment;
    std::vector<RunRecord> runs;

    std::vector<double> test_dice() const;
    std::vector<double> test_mad() const;
};

std::vector<MetricRecord> evaluate(const Segmenter& segment, const std::vector<Case>& cases);

// Runs `trainer` `runs` times with seeds derived from `seed` and the run index.
RunSet repeat_runs(const std::string& experiment, const Trainer& trainer, const std::vector<Case>& training,
                   const std::vector<Case>& validation, const std::vector<Case>& test, std::int64_t runs,
                   std::uint64_t seed);

// Index of the run with the highest validation Dice; ties go to the lowest index.
std::size_t select_best(const RunSet& runs);

// Class-constrained fold assignment: each fold gets `dilated_per_fold`
// dilated and `normal_per_fold` normal cases, drawn in seeded order.
std::vector<std::vector<std::string>> make_folds(const std::vector<Case>& cases, std::int64_t folds,
                                                 std::int64_t dilated_per_fold, std::int64_t normal_per_fold,
                                                 std::uint64_t seed);

struct FoldResult {
    std::int64_t fold = 0;
    std::vector<std::string> training_ids;
    std::vector<std::string> test_ids;
    RunSet runs;
    MeanStd dice;  // over runs of the per-run mean test Dice
    MeanStd mad;
};

// Each fold is the test set once; the remaining folds train. `validation`
// stays fixed and must not appear in any fold.
std::vector<FoldResult> crossval(const std::vector<Case>& cases, const std::vector<std::vector<std::string>>& folds,
                                 const std::vector<Case>& validation, const Trainer& trainer,
                                 std::int64_t repetitions, std::uint64_t seed);
void write_crossval_csv(std::ostream& os, const std::vector<FoldResult>& folds);

struct SweepPoint {
    std::int64_t size = 0;
    MeanStd train_dice;
    MeanStd test_dice;
    double p = 1;  // test Dice against the largest size
    std::vector<double> test_samples;
    std::vector<std::vector<std::string>> draws;
};

std::vector<SweepPoint> training_size_sweep(const std::vector<Case>& pool, const std::vector<Case>& validation,
                                            const std::vector<Case>& test, const std::vector<std::int64_t>& sizes,
                                            std::int64_t repetitions, const Trainer& trainer, std::uint64_t seed);
void write_sweep_csv(std::ostream& os, const std::vector<SweepPoint>& points);

using SpecTrainer = std::function<Trainer(const NetworkSpec& spec)>;

struct AblationRow {
    NetworkSpec spec;  // use_cppn off
    RunSet no_cppn;
    RunSet cppn;
    double p_dice = 1;
    double p_mad = 1;
};

struct AblationGrid {
    std::vector<AblationRow> rows;
};

// One row per (family, depth) of `specs`, each trained without and with the
// CPPN. Runs with the same index share a seed across the two arms.
AblationGrid depth_ablation(const std::vector<NetworkSpec>& specs, const SpecTrainer& make_trainer,
                            const std::vector<Case>& training, const std::vector<Case>& validation,
                            const std::vector<Case>& test, std::int64_t runs, std::uint64_t seed);
// Columns: network, layers, dice_no_cppn, dice_cppn, p, mad_no_cppn, mad_cppn, p.
void write_ablation_csv(std::ostream& os, const AblationGrid& grid);

// Trainer backed by a real network of `spec` and module train.
Trainer network_trainer(const NetworkSpec& spec, const TrainConfig& config);
SpecTrainer network_spec_trainer(const TrainConfig& config);

}  // namespace ventseg
