// Finite-difference gradient verification harness (test-only oracle).
// The probe functional is Phi(x) = sum_i r_i * block(x)_i with fixed random
// weights r, accumulated in double so FD noise comes from the block itself.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "vesselseg/nn/param.hpp"
#include "vesselseg/nn/tensor.hpp"
#include "vesselseg/rng.hpp"

namespace gradcheck {

template <class S>
struct Problem {
    std::function<vesselseg::nn::TensorT<S>(const vesselseg::nn::TensorT<S>&)> forward;
    // g -> dx; must also accumulate parameter gradients
    std::function<vesselseg::nn::TensorT<S>(const vesselseg::nn::TensorT<S>&)> backward;
    std::vector<vesselseg::nn::ParamT<S>*> params;
};

template <class S>
vesselseg::nn::TensorT<S> random_tensor(int b, int c, int d, int h, int w, vesselseg::Rng& rng,
                                        double scale = 1.0) {
    vesselseg::nn::TensorT<S> t(b, c, d, h, w);
    for (auto& v : t.v) v = S(rng.uniform(-scale, scale));
    return t;
}

template <class S>
double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
    double na = 0.0, nb = 0.0, nd = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        const double d = a[i] - b[i];
        nd += d * d;
    }
    const double denom = std::max(std::sqrt(na), std::sqrt(nb));
    if (denom < 1e-12) return std::sqrt(nd);
    return std::sqrt(nd) / denom;
}

/// Max relative-L2 error between analytic and central-difference gradients,
/// w.r.t. the input and every parameter.
template <class S>
double max_rel_error(Problem<S>& prob, vesselseg::nn::TensorT<S> x, vesselseg::Rng& rng,
                     double step) {
    using vesselseg::nn::TensorT;

    TensorT<S> y0 = prob.forward(x);
    TensorT<S> r = y0;
    for (auto& v : r.v) v = S(rng.uniform(-1.0, 1.0));

    const auto phi = [&](const TensorT<S>& xin) {
        const TensorT<S> y = prob.forward(xin);
        double acc = 0.0;
        for (size_t i = 0; i < y.v.size(); ++i) acc += double(r.v[i]) * double(y.v[i]);
        return acc;
    };

    for (auto* p : prob.params) p->zero_grad();
    (void)prob.forward(x);  // fresh caches for the analytic pass
    TensorT<S> dx = prob.backward(r);

    double worst = 0.0;
    {
        std::vector<double> analytic(dx.v.begin(), dx.v.end());
        std::vector<double> fd(dx.v.size());
        for (size_t i = 0; i < x.v.size(); ++i) {
            const S keep = x.v[i];
            x.v[i] = keep + S(step);
            const double up = phi(x);
            x.v[i] = keep - S(step);
            const double dn = phi(x);
            x.v[i] = keep;
            fd[i] = (up - dn) / (2.0 * step);
        }
        worst = std::max(worst, rel_l2<S>(analytic, fd));
    }

    for (auto* p : prob.params) {
        std::vector<double> analytic(p->grad.begin(), p->grad.end());
        std::vector<double> fd(p->value.size());
        for (size_t i = 0; i < p->value.size(); ++i) {
            const S keep = p->value[i];
            p->value[i] = keep + S(step);
            const double up = phi(x);
            p->value[i] = keep - S(step);
            const double dn = phi(x);
            p->value[i] = keep;
            fd[i] = (up - dn) / (2.0 * step);
        }
        worst = std::max(worst, rel_l2<S>(analytic, fd));
    }
    return worst;
}

template <class S>
constexpr double default_step() {
    return sizeof(S) == 4 ? 1e-2 : 1e-4;
}

/// Checks a reduced-precision block against a double-precision twin of the
/// same architecture: parameters are copied across, the analytic gradient is
/// taken from the checked block, and the finite-difference reference is
/// evaluated on the twin so the difference quotient stays well-conditioned.
template <class S>
double max_rel_error_vs_f64(Problem<S>& prob, Problem<double>& twin,
                            vesselseg::nn::TensorT<S> x, vesselseg::Rng& rng,
                            double step = 1e-4) {
    using vesselseg::nn::TensorT;
    if (prob.params.size() != twin.params.size())
        throw std::runtime_error("gradcheck: twin parameter count mismatch");
    for (size_t i = 0; i < prob.params.size(); ++i) {
        auto& p = *prob.params[i];
        auto& q = *twin.params[i];
        if (p.size() != q.size()) throw std::runtime_error("gradcheck: twin shape mismatch");
        for (size_t k = 0; k < p.size(); ++k) q.value[k] = double(p.value[k]);
    }
    TensorT<double> x64(x.b, x.c, x.d, x.h, x.w);
    for (size_t i = 0; i < x.v.size(); ++i) x64.v[i] = double(x.v[i]);

    TensorT<S> y0 = prob.forward(x);
    TensorT<S> r = y0;
    for (auto& v : r.v) v = S(rng.uniform(-1.0, 1.0));
    TensorT<double> r64(r.b, r.c, r.d, r.h, r.w);
    for (size_t i = 0; i < r.v.size(); ++i) r64.v[i] = double(r.v[i]);

    const auto phi = [&](const TensorT<double>& xin) {
        const TensorT<double> y = twin.forward(xin);
        double acc = 0.0;
        for (size_t i = 0; i < y.v.size(); ++i) acc += r64.v[i] * y.v[i];
        return acc;
    };

    for (auto* p : prob.params) p->zero_grad();
    (void)prob.forward(x);
    TensorT<S> dx = prob.backward(r);

    double worst = 0.0;
    {
        std::vector<double> analytic(dx.v.begin(), dx.v.end());
        std::vector<double> fd(dx.v.size());
        for (size_t i = 0; i < x64.v.size(); ++i) {
            const double keep = x64.v[i];
            x64.v[i] = keep + step;
            const double up = phi(x64);
            x64.v[i] = keep - step;
            const double dn = phi(x64);
            x64.v[i] = keep;
            fd[i] = (up - dn) / (2.0 * step);
        }
        worst = std::max(worst, rel_l2<S>(analytic, fd));
    }
    for (size_t pi = 0; pi < prob.params.size(); ++pi) {
        auto& q = *twin.params[pi];
        std::vector<double> analytic(prob.params[pi]->grad.begin(), prob.params[pi]->grad.end());
        std::vector<double> fd(q.size());
        for (size_t i = 0; i < q.size(); ++i) {
            const double keep = q.value[i];
            q.value[i] = keep + step;
            const double up = phi(x64);
            q.value[i] = keep - step;
            const double dn = phi(x64);
            q.value[i] = keep;
            fd[i] = (up - dn) / (2.0 * step);
        }
        worst = std::max(worst, rel_l2<S>(analytic, fd));
    }
    return worst;
}

}  // namespace gradcheck
