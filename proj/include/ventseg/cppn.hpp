#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ventseg/coords.hpp"
#include "ventseg/layers.hpp"

namespace ventseg {

// Output widths of the three pointwise layers; the last must be 8.
struct CppnConfig {
    std::vector<std::int64_t> widths{16, 16, 8};

    static constexpr std::int64_t kPatternChannels = 8;
    void validate() const;
    bool operator==(const CppnConfig&) const = default;
};

// O = w1 x^2 + w2 y^2 + w3 z^2 + w4 xy + w5 xz + w6 yz + w7 x + w8 y + w9 z + b
Field quadric_preactivation(const CppnInput& input, std::span<const Real, 9> w, Real b);

struct CppnTrace {
    std::vector<Tensor> inputs;
    std::vector<BatchNormCache> bn;
    std::vector<Tensor> outputs;
};

// Pattern-producing branch: three (1x1[x1] conv -> BN -> ReLU) layers on the
// nine coordinate channels. Parameters live in a caller-owned store.
class Cppn {
public:
    Cppn() = default;
    Cppn(ParameterStore& store, const std::string& prefix, const CppnConfig& config);

    Tensor forward_train(ParameterStore& store, const Tensor& coords, CppnTrace& trace) const;
    Tensor forward_eval(const ParameterStore& store, const Tensor& coords) const;
    void backward(ParameterStore& store, const CppnTrace& trace, Tensor dy) const;
    Tensor forward(ParameterStore& store, const Tensor& coords, Mode mode) const;

    void initialize(ParameterStore& store, std::mt19937_64& rng, Real bias) const;
    const std::vector<ConvLayer>& convs() const { return convs_; }
    const std::vector<BatchNormLayer>& norms() const { return norms_; }
    std::int64_t out_channels() const { return CppnConfig::kPatternChannels; }

private:
    std::vector<ConvLayer> convs_;
    std::vector<BatchNormLayer> norms_;
};

// A pattern network that owns its parameters.
class CppnModel {
public:
    explicit CppnModel(const CppnConfig& config = {}, std::uint64_t seed = 0);

    // Returns the 8-channel pattern field, shape [1, 8, d, h, w].
    Tensor forward(const CppnInput& input, Mode mode);

    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }
    const Cppn& net() const { return net_; }

private:
    ParameterStore params_;
    Cppn net_;
};

}  // namespace ventseg
