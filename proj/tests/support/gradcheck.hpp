#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "yofo/tensor.hpp"

// Central finite-difference gradient oracle. Independent of the tape's
// backward path: it only re-evaluates the forward builder at perturbed
// parameter values.
namespace testsupport {

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    size_t checked = 0;
};

// `build` must rebuild the whole forward graph from the current parameter
// values (re-seeding any internal noise), returning the scalar loss.
template <class S, class F>
GradCheckResult grad_check(std::vector<yofo::TensorT<S>> params, F&& build, double h = 1e-5) {
    using namespace yofo;
    for (auto& p : params) p.zero_grad();
    TapeT<S> tape;
    auto loss = build(&tape);
    tape.backward(loss);
    std::vector<std::vector<S>> analytic;
    for (auto& p : params) {
        p.ensure_grad();
        analytic.push_back(p.grad());
        p.zero_grad();
    }
    GradCheckResult res;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        for (size_t i = 0; i < p.numel(); ++i) {
            const S orig = p.value()[i];
            p.value()[i] = orig + static_cast<S>(h);
            TapeT<S> t1;
            const double up = static_cast<double>(build(&t1).item());
            p.value()[i] = orig - static_cast<S>(h);
            TapeT<S> t2;
            const double down = static_cast<double>(build(&t2).item());
            p.value()[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            res.max_rel_err =
                std::max(res.max_rel_err, rel_err(static_cast<double>(analytic[pi][i]), fd));
            ++res.checked;
        }
    }
    return res;
}

template <class S, class F>
GradCheckResult grad_check(std::initializer_list<yofo::TensorT<S>> params, F&& build,
                           double h = 1e-5) {
    return grad_check(std::vector<yofo::TensorT<S>>(params), std::forward<F>(build), h);
}

template <class S = double>
yofo::TensorT<S> random_tensor(yofo::Shape shape, yofo::Rng& rng, double scale = 1.0) {
    auto t = yofo::TensorT<S>::param(std::move(shape));
    for (auto& x : t.value()) x = static_cast<S>(rng.normal(0.0, scale));
    return t;
}

}  // namespace testsupport
