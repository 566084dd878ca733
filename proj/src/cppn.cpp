#include "ventseg/cppn.hpp"

#include <stdexcept>

namespace ventseg {

void CppnConfig::validate() const {
    if (widths.size() != 3) throw std::invalid_argument("CPPN has exactly three layers");
    for (auto w : widths)
        if (w <= 0) throw std::invalid_argument("CPPN widths must be positive");
    if (widths.back() != kPatternChannels) throw std::invalid_argument("CPPN must emit 8 pattern channels");
}

Field quadric_preactivation(const CppnInput& input, std::span<const Real, 9> w, Real b) {
    Field out(input.shape(), input.channels[0].spacing, b);
    for (std::size_t k = 0; k < 9; ++k) {
        const auto& ch = input.channels[k].data;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += w[k] * ch[i];
    }
    return out;
}

Cppn::Cppn(ParameterStore& store, const std::string& prefix, const CppnConfig& config) {
    config.validate();
    std::int64_t in = CppnInput::kChannels;
    for (std::size_t i = 0; i < config.widths.size(); ++i) {
        ConvGeometry g;
        g.in_channels = in;
        g.out_channels = config.widths[i];
        g.kernel = {1, 1, 1};
        g.padding = {0, 0, 0};
        const auto name = prefix + ".layer" + std::to_string(i + 1);
        convs_.emplace_back(store, name + ".conv", g);
        norms_.emplace_back(store, name + ".bn", g.out_channels);
        in = g.out_channels;
    }
}

void Cppn::initialize(ParameterStore& store, std::mt19937_64& rng, Real bias) const {
    for (const auto& c : convs_) xavier_init(store, c, rng, bias);
}

Tensor Cppn::forward_train(ParameterStore& store, const Tensor& coords, CppnTrace& trace) const {
    trace = {};
    trace.bn.resize(convs_.size());
    Tensor x = coords;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        trace.inputs.push_back(x);
        Tensor y = norms_[i].forward_train(store, convs_[i].forward(store, x), trace.bn[i]);
        relu_inplace(y);
        trace.outputs.push_back(y);
        x = std::move(y);
    }
    return x;
}

Tensor Cppn::forward_eval(const ParameterStore& store, const Tensor& coords) const {
    Tensor x = coords;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = norms_[i].forward_eval(store, convs_[i].forward(store, x));
        relu_inplace(x);
    }
    return x;
}

Tensor Cppn::forward(ParameterStore& store, const Tensor& coords, Mode mode) const {
    if (mode == Mode::eval) return forward_eval(store, coords);
    CppnTrace trace;
    return forward_train(store, coords, trace);
}

void Cppn::backward(ParameterStore& store, const CppnTrace& trace, Tensor dy) const {
    for (std::size_t i = convs_.size(); i-- > 0;) {
        relu_backward_inplace(trace.outputs[i], dy);
        dy = norms_[i].backward(store, trace.bn[i], dy);
        dy = convs_[i].backward(store, trace.inputs[i], dy);
    }
}

CppnModel::CppnModel(const CppnConfig& config, std::uint64_t seed) : net_(params_, "cppn", config) {
    std::mt19937_64 rng(seed);
    net_.initialize(params_, rng, Real(0.01));
}

Tensor CppnModel::forward(const CppnInput& input, Mode mode) { return net_.forward(params_, to_tensor(input), mode); }

}  // namespace ventseg
