#pragma once

#include "jointmotion/autograd.hpp"
#include "jointmotion/rng.hpp"
#include "jointmotion/tensor.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace jm::testing {

inline Tensor random_tensor(int rows, int cols, Rng& rng, double scale = 1.0) {
    Tensor t(rows, cols);
    for (double& v : t.flat()) v = rng.uniform(-scale, scale);
    return t;
}

using ScalarFn = std::function<Var(const std::vector<Var>&)>;

// Largest relative error between the autograd gradient of f and central
// differences with step h, over every element of every input.
inline double gradient_error(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.emplace_back(t, true);
    backward(f(vars));

    double worst = 0.0;
    for (size_t k = 0; k < inputs.size(); ++k) {
        for (size_t e = 0; e < inputs[k].size(); ++e) {
            auto eval = [&](double delta) {
                std::vector<Var> probe;
                for (size_t j = 0; j < inputs.size(); ++j) {
                    Tensor t = inputs[j];
                    if (j == k) t.data()[e] += delta;
                    probe.emplace_back(t, false);
                }
                return f(probe).item();
            };
            const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
            const double analytic = vars[k].grad().empty() ? 0.0 : vars[k].grad().data()[e];
            const double err = std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric) + std::abs(analytic));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

} // namespace jm::testing
