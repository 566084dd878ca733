#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ventseg/cppn.hpp"
#include "ventseg/grid.hpp"
#include "ventseg/layers.hpp"

namespace ventseg {

enum class Family { unet2d, vnet3d };
std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct NetworkSpec {
    static constexpr std::int64_t kInputChannels = 1;
    static constexpr std::int64_t kClasses = 2;

    Family family = Family::unet2d;
    // unet2d: number of pooling levels, 1..4. vnet3d: downsampling levels, 0..3.
    int depth_level = 4;
    std::int64_t base_channels = 64;
    bool use_cppn = true;
    CppnConfig cppn;
    // vnet3d only: add each block's input (or its upsampled input) to its output.
    bool residual = false;

    static NetworkSpec unet2d(int depth = 4, std::int64_t base = 64, bool cppn = true);
    static NetworkSpec vnet3d(int depth = 3, std::int64_t base = 32, bool cppn = true);

    int min_depth() const;
    int max_depth() const;
    // Family/level names used in reporting: 9/14/19/24 (unet2d), 7/15/23/31 (vnet3d).
    int nominal_layers() const;
    // Learnable convolution + deconvolution layers including the classifier.
    int learnable_layers() const;
    std::int64_t width(int level) const { return base_channels << level; }
    // Patch/window extents must be multiples of this along each axis.
    Extent3 size_multiple() const;
    bool is_3d() const { return family == Family::vnet3d; }

    void validate() const;
    bool operator==(const NetworkSpec&) const = default;
};

void to_json(nlohmann::json& j, const NetworkSpec& s);
void from_json(const nlohmann::json& j, NetworkSpec& s);

// Adds one level at the bottom of the encoder-decoder.
NetworkSpec grow_depth(const NetworkSpec& spec);

enum class LayerKind { conv, max_pool, down_conv, deconv, classifier };

struct LayerDesc {
    std::string stage;
    LayerKind kind;
    std::int64_t in_channels;
    std::int64_t out_channels;
    Extent3 kernel;
    bool operator==(const LayerDesc&) const = default;
};

// Flat architecture listing in execution order.
std::vector<LayerDesc> describe(const NetworkSpec& spec);

// conv -> BN -> ReLU
struct Unit {
    std::string stage;
    ConvLayer conv;
    BatchNormLayer bn;
};

struct NetworkTape;

class Network {
public:
    static Network build(const NetworkSpec& spec, std::uint64_t seed);

    Network(const Network&);
    Network& operator=(const Network&);
    Network(Network&&) noexcept;
    Network& operator=(Network&&) noexcept;
    ~Network();

    const NetworkSpec& spec() const { return spec_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }
    std::size_t parameter_count() const { return params_.trainable_scalars(); }

    // Class probabilities [n, 2, d, h, w]. Train mode records a tape for
    // backward() and updates batch-normalization running statistics.
    Tensor forward(const Tensor& batch, const Tensor* coords, Mode mode);
    // Read-only evaluation; safe to call concurrently.
    Tensor infer(const Tensor& batch, const Tensor* coords, Tensor* patterns = nullptr) const;
    // Accumulates parameter gradients from d(loss)/d(probabilities).
    void backward(const Tensor& dprobs);

    // Pattern channels at the fusion point from the last forward() call.
    const Tensor& last_patterns() const { return last_patterns_; }

    // Marks every batch-normalization layer as having running statistics.
    void mark_statistics_ready();
    bool statistics_ready() const;

    const std::vector<Unit>& units() const { return units_; }
    const ConvLayer& classifier() const { return classifier_; }
    const Cppn* cppn() const { return spec_.use_cppn ? &cppn_ : nullptr; }

    // Copy parameter values (and buffers) from a store with identical layout.
    void load_parameters(const ParameterStore& source);

private:
    Network() = default;
    void check_inputs(const Tensor& batch, const Tensor* coords) const;
    template <typename Exec>
    typename Exec::Value run(Exec& ex, typename Exec::Value input, const Tensor* coords) const;

    NetworkSpec spec_;
    ParameterStore params_;
    std::vector<Unit> units_;
    ConvLayer classifier_;
    Cppn cppn_;
    Tensor last_patterns_;
    std::unique_ptr<NetworkTape> tape_;
};

// Argmax over the two class channels; ties go to background.
LabelMap predict_labels(const Tensor& probs, std::int64_t sample = 0);
std::uint8_t predict_label(Real background, Real foreground);

}  // namespace ventseg
