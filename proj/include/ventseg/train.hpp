#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ventseg/coords.hpp"
#include "ventseg/grid.hpp"
#include "ventseg/nets.hpp"
#include "ventseg/optim.hpp"

namespace ventseg {

using Rng = std::mt19937_64;

struct LrStage {
    std::int64_t start = 0;
    double rate = 0;
    bool operator==(const LrStage&) const = default;
};

enum class LossKind { cross_entropy, soft_dice };
std::string to_string(LossKind k);

struct TrainConfig {
    std::int64_t warmup_steps = 5000;
    Extent3 patch{1, 128, 128};
    std::int64_t batch = 8;
    AdamConfig adam;
    std::vector<LrStage> lr_stages{{0, 1e-4}, {10000, 2e-5}, {20000, 5e-6}};
    std::int64_t patience = 5000;
    std::int64_t cadence = 500;
    std::int64_t max_iterations = 30000;
    std::uint64_t seed = 1;
    double delta = 1e-10;
    // Probability that a patch is forced to contain a foreground voxel.
    double foreground_fraction = 0;
    // vnet3d validation windows.
    std::int64_t window_extent = 64;
    double window_overlap = 0.75;

    static TrainConfig for_family(Family family);
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Stage whose start is the largest one <= iteration.
double lr_at(std::int64_t iteration, const TrainConfig& config);
// Cross-entropy before warmup_steps, soft Dice from then on.
LossKind loss_at(std::int64_t iteration, const TrainConfig& config);

// 1 - 2 sum(y yhat) / (delta + sum(y + yhat)). When `grad` is non-empty it
// receives d(loss)/d(yhat).
double soft_dice_loss(std::span<const double> y, std::span<const double> yhat, double delta,
                      std::span<double> grad = {});
// Mean of -log(max(p_true, 1e-12)); `grad` receives d(loss)/d(p_true).
double cross_entropy_loss(std::span<const std::uint8_t> y, std::span<const double> p_true,
                          std::span<double> grad = {});

struct LossValue {
    double value = 0;
    Tensor dprobs;  // gradient w.r.t. the [n, 2, ...] probabilities
};

// Both take labels as [n, 1, ...] {0,1} and class probabilities [n, 2, ...].
// Soft Dice is computed over class 1 across the whole batch.
LossValue soft_dice_loss(const Tensor& labels, const Tensor& probs, double delta);
LossValue cross_entropy_loss(const Tensor& labels, const Tensor& probs);

struct Patch {
    Extent3 origin{0, 0, 0};
    Volume image;
    LabelMap labels;
    std::optional<CppnInput> coords;
};

// Uniform origin over all positions where `patch` fits. With probability
// `foreground_fraction` the origin is instead drawn among windows holding a
// random foreground voxel.
Extent3 sample_origin(Extent3 volume, Extent3 patch, Rng& rng, const LabelMap* labels = nullptr,
                      double foreground_fraction = 0);
Patch sample_patch(const Volume& image, const LabelMap& labels, const CppnInput* coords, Extent3 patch, Rng& rng,
                   double foreground_fraction = 0);

// What the loop needs from a network; lets tests drive it with a stub.
class TrainableModel {
public:
    virtual ~TrainableModel() = default;
    virtual Tensor forward(const Tensor& batch, const Tensor* coords) = 0;
    virtual void backward(const Tensor& dprobs) = 0;
    virtual ParameterStore& params() = 0;
    virtual bool uses_coords() const = 0;
};

class NetworkModel : public TrainableModel {
public:
    explicit NetworkModel(Network& net) : net_(net) {}
    Tensor forward(const Tensor& batch, const Tensor* coords) override { return net_.forward(batch, coords, Mode::train); }
    void backward(const Tensor& dprobs) override { net_.backward(dprobs); }
    ParameterStore& params() override { return net_.params(); }
    bool uses_coords() const override { return net_.spec().use_cppn; }
    Network& network() { return net_; }

private:
    Network& net_;
};

struct ValidationPoint {
    std::int64_t iteration = 0;  // iterations completed
    double dice = 0;
    bool operator==(const ValidationPoint&) const = default;
};

enum class StopReason { max_iterations, patience, non_finite_loss };
std::string to_string(StopReason r);

struct TrainHistory {
    std::vector<double> losses;
    std::vector<LossKind> loss_kinds;
    std::vector<ValidationPoint> validation;
    std::int64_t best_iteration = -1;
    double best_dice = -1;
    StopReason stop_reason = StopReason::max_iterations;
    bool operator==(const TrainHistory&) const = default;
};

struct TrainResult {
    TrainHistory history;
    ParameterStore best;  // parameters at the best validation point
    Adam optimizer;
    std::string rng_state;
};

// Mean validation Dice of the model in its current state.
using Validator = std::function<double(TrainableModel&)>;

struct TrainHooks {
    // Called after every validation point.
    std::function<void(const ValidationPoint&, bool is_best, const TrainableModel&)> on_validation;
    // Line-oriented log: iteration, loss name, loss, lr[, validation Dice].
    std::ostream* log = nullptr;
    std::int64_t log_every = 100;
};

TrainResult train(TrainableModel& model, const std::vector<Case>& training, const Validator& validator,
                  const TrainConfig& config, const TrainHooks& hooks = {});

// Full-volume validation through module infer. The best parameters are
// loaded back into `net` before returning. When `checkpoint_dir` is set a
// checkpoint is written at every validation point and at every new best.
TrainResult train(Network& net, const std::vector<Case>& training, const std::vector<Case>& validation,
                  const TrainConfig& config, const TrainHooks& hooks = {},
                  const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

// Mean full-volume Dice of `net` over `cases`.
double mean_dice(const Network& net, const std::vector<Case>& cases, std::int64_t window_extent = 64,
                 double window_overlap = 0.75);

}  // namespace ventseg
