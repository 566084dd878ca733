#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ventseg/real.hpp"

namespace ventseg {

// A named parameter or state buffer. Buffers (trainable == false) hold
// batch-normalization running statistics; they are checkpointed but never
// touched by the optimizer.
struct Parameter {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool trainable = true;

    std::size_t size() const { return value.size(); }
};

class ParameterStore {
public:
    std::size_t add(std::string name, std::vector<std::int64_t> shape, Real fill, bool trainable = true);

    Parameter& operator[](std::size_t i) { return params_[i]; }
    const Parameter& operator[](std::size_t i) const { return params_[i]; }
    std::size_t count() const { return params_.size(); }

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }

    void zero_grad();
    // Number of trainable scalars.
    std::size_t trainable_scalars() const;
    std::size_t find(const std::string& name) const;

    bool operator==(const ParameterStore& other) const;

private:
    std::vector<Parameter> params_;
};

}  // namespace ventseg
