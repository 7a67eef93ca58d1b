#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vesselseg/rng.hpp"

namespace vesselseg::nn {

/// Learnable array plus its gradient accumulator.
template <class S>
struct ParamT {
    std::string local_name;
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;

    ParamT() = default;
    ParamT(std::string name, std::vector<int> shape_)
        : local_name(std::move(name)), shape(std::move(shape_)) {
        size_t n = 1;
        for (int s : shape) n *= static_cast<size_t>(s);
        value.assign(n, S{0});
        grad.assign(n, S{0});
    }

    size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), S{0}); }

    void fill(S x) { std::fill(value.begin(), value.end(), x); }

    /// Kaiming-style uniform init over [-bound, bound] with bound = sqrt(1/fan_in).
    void init_uniform(vesselseg::Rng& rng, int fan_in) {
        const double bound = fan_in > 0 ? std::sqrt(1.0 / fan_in) : 1.0;
        for (auto& x : value) x = static_cast<S>(rng.uniform(-bound, bound));
    }
};

/// Visitor used to enumerate parameters with hierarchical names.
template <class S>
struct ParamVisitorT {
    std::string prefix;
    std::function<void(const std::string&, ParamT<S>&)> fn;

    void operator()(ParamT<S>& p) const { fn(prefix + p.local_name, p); }
    ParamVisitorT nested(const std::string& sub) const { return {prefix + sub + ".", fn}; }
};

}  // namespace vesselseg::nn
