#pragma once

#include <cstdint>
#include <vector>

#include "ventseg/params.hpp"

namespace ventseg {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    bool operator==(const AdamConfig&) const = default;
};

// Adam with bias correction. Moment buffers are laid out parallel to the
// trainable parameters of the store they were created for.
class Adam {
public:
    Adam() = default;
    Adam(const ParameterStore& store, AdamConfig config = {});

    void step(ParameterStore& store, double learning_rate);

    std::int64_t steps() const { return step_; }
    const AdamConfig& config() const { return config_; }
    std::vector<std::vector<Real>>& first_moments() { return m_; }
    std::vector<std::vector<Real>>& second_moments() { return v_; }
    const std::vector<std::vector<Real>>& first_moments() const { return m_; }
    const std::vector<std::vector<Real>>& second_moments() const { return v_; }
    void set_steps(std::int64_t s) { step_ = s; }

    bool operator==(const Adam&) const = default;

private:
    AdamConfig config_;
    std::int64_t step_ = 0;
    std::vector<std::vector<Real>> m_;
    std::vector<std::vector<Real>> v_;
};

}  // namespace ventseg
