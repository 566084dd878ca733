#include "ventseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ventseg {

Adam::Adam(const ParameterStore& store, AdamConfig config) : config_(config) {
    for (const auto& p : store.all()) {
        m_.emplace_back(p.trainable ? p.size() : 0, Real(0));
        v_.emplace_back(p.trainable ? p.size() : 0, Real(0));
    }
}

void Adam::step(ParameterStore& store, double lr) {
    if (store.count() != m_.size()) throw std::logic_error("optimizer state does not match parameter store");
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const double step_size = lr * std::sqrt(c2) / c1;
    // epsilon is applied to the bias-corrected second moment
    const double eps = config_.epsilon * std::sqrt(c2);
    for (std::size_t i = 0; i < store.count(); ++i) {
        auto& p = store[i];
        if (!p.trainable) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k];
            m[k] = static_cast<Real>(b1 * m[k] + (1 - b1) * g);
            v[k] = static_cast<Real>(b2 * v[k] + (1 - b2) * g * g);
            p.value[k] -= static_cast<Real>(step_size * m[k] / (std::sqrt(static_cast<double>(v[k])) + eps));
        }
    }
}

}  // namespace ventseg
