#include "jointmotion/optim.hpp"

#include <cmath>

namespace jm {

void AdamW::step(ParameterStore& store, double lr) {
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (const auto& [name, param] : store.all()) {
        Var p = param;
        Tensor& w = p.mutable_value();
        auto [it, inserted] = moments_.try_emplace(name, Tensor(w.rows(), w.cols()), Tensor(w.rows(), w.cols()));
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        const Tensor& g = p.grad();
        const bool has_grad = !g.empty();
        for (size_t i = 0; i < w.size(); ++i) {
            const double gi = has_grad ? g.data()[i] : 0.0;
            m.data()[i] = b1 * m.data()[i] + (1.0 - b1) * gi;
            v.data()[i] = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            const double mh = m.data()[i] / c1, vh = v.data()[i] / c2;
            w.data()[i] -= lr * (mh / (std::sqrt(vh) + config_.eps) + config_.weight_decay * w.data()[i]);
        }
    }
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
    double sq = 0.0;
    for (const auto& [_, p] : store.all())
        for (double g : p.grad().flat()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& [_, p] : store.all()) {
            Var h = p;
            for (double& g : h.node()->grad.flat()) g *= s;
        }
    }
    return norm;
}

double StepSchedule::lr(int epoch) const {
    return base_lr * std::pow(factor, static_cast<double>(epoch / step_epochs));
}

} // namespace jm
