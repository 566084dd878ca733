#include "ventseg/params.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace ventseg {

std::size_t ParameterStore::add(std::string name, std::vector<std::int64_t> shape, Real fill,
                                bool trainable) {
    const auto n = std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
    Parameter p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.value.assign(static_cast<std::size_t>(n), fill);
    if (trainable) p.grad.assign(static_cast<std::size_t>(n), Real(0));
    p.trainable = trainable;
    params_.push_back(std::move(p));
    return params_.size() - 1;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), Real(0));
}

std::size_t ParameterStore::trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += p.size();
    return n;
}

std::size_t ParameterStore::find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw std::out_of_range("no parameter named " + name);
}

bool ParameterStore::operator==(const ParameterStore& other) const {
    if (params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& a = params_[i];
        const auto& b = other.params_[i];
        if (a.name != b.name || a.shape != b.shape || a.trainable != b.trainable || a.value != b.value)
            return false;
    }
    return true;
}

}  // namespace ventseg
