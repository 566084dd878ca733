#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ventseg/params.hpp"
#include "ventseg/tensor.hpp"

namespace ventseg {

enum class Mode { train, eval };

// Convolution geometry. With `transposed` set the layer is a
// non-overlapping deconvolution (kernel == stride, no padding).
struct ConvGeometry {
    std::int64_t in_channels = 1;
    std::int64_t out_channels = 1;
    Extent3 kernel{1, 3, 3};
    Extent3 stride{1, 1, 1};
    Extent3 padding{0, 1, 1};
    bool transposed = false;

    std::int64_t kernel_volume() const { return kernel.voxels(); }
    Extent3 output_extent(const Extent3& in) const;
};

class ConvLayer {
public:
    ConvLayer() = default;
    ConvLayer(ParameterStore& store, const std::string& name, ConvGeometry geometry);

    Tensor forward(const ParameterStore& store, const Tensor& x) const;
    // Accumulates weight/bias gradients; returns d(loss)/dx.
    Tensor backward(ParameterStore& store, const Tensor& x, const Tensor& dy) const;

    const ConvGeometry& geometry() const { return geom_; }
    std::size_t weight_index() const { return weight_; }
    std::size_t bias_index() const { return bias_; }
    // Xavier/Glorot fan sizes.
    std::int64_t fan_in() const;
    std::int64_t fan_out() const;

private:
    Tensor forward_direct(const ParameterStore& store, const Tensor& x) const;
    Tensor forward_transposed(const ParameterStore& store, const Tensor& x) const;
    Tensor backward_direct(ParameterStore& store, const Tensor& x, const Tensor& dy) const;
    Tensor backward_transposed(ParameterStore& store, const Tensor& x, const Tensor& dy) const;

    ConvGeometry geom_;
    std::size_t weight_ = 0;
    std::size_t bias_ = 0;
};

struct BatchNormCache {
    Tensor normalized;
    std::vector<Real> inv_std;
};

// Per-channel batch normalization. Running statistics are store buffers,
// plus a one-element `ready` flag set after the first training batch.
class BatchNormLayer {
public:
    static constexpr Real kEpsilon = Real(1e-5);
    static constexpr Real kMomentum = Real(0.9);

    BatchNormLayer() = default;
    BatchNormLayer(ParameterStore& store, const std::string& name, std::int64_t channels);

    Tensor forward_train(ParameterStore& store, const Tensor& x, BatchNormCache& cache) const;
    Tensor forward_eval(const ParameterStore& store, const Tensor& x) const;
    Tensor backward(ParameterStore& store, const BatchNormCache& cache, const Tensor& dy) const;

    bool ready(const ParameterStore& store) const;
    void mark_ready(ParameterStore& store) const;
    std::size_t gamma_index() const { return gamma_; }
    std::size_t beta_index() const { return beta_; }
    std::size_t mean_index() const { return mean_; }
    std::size_t var_index() const { return var_; }

private:
    std::int64_t channels_ = 0;
    std::size_t gamma_ = 0, beta_ = 0, mean_ = 0, var_ = 0, ready_ = 0;
    std::string name_;
};

void relu_inplace(Tensor& x);
// dy masked by y > 0, in place.
void relu_backward_inplace(const Tensor& y, Tensor& dy);

struct PoolCache {
    Extent3 input;
    std::vector<std::int64_t> argmax;
};

Tensor max_pool(const Tensor& x, Extent3 window, PoolCache* cache);
Tensor max_pool_backward(const Tensor& dy, const PoolCache& cache, std::int64_t n, std::int64_t c);

// Glorot/Xavier uniform weights, limit sqrt(6 / (fan_in + fan_out)); biases
// set to `bias`.
void xavier_init(ParameterStore& store, const ConvLayer& layer, std::mt19937_64& rng, Real bias);

// Softmax across channels at every voxel.
Tensor softmax_channels(const Tensor& logits);
Tensor softmax_backward(const Tensor& probs, const Tensor& dprobs);

}  // namespace ventseg
