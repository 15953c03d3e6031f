#pragma once

#include "jointmotion/nn.hpp"

#include <map>
#include <string>

namespace jm {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled weight decay Adam over every parameter in a store.
class AdamW {
public:
    explicit AdamW(AdamWConfig config) : config_(config) {}
    void step(ParameterStore& store, double lr);
    long long steps() const { return t_; }

private:
    AdamWConfig config_;
    long long t_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

// Scales all gradients so their joint L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_grad_norm(ParameterStore& store, double max_norm);

struct StepSchedule {
    double base_lr = 1e-4;
    double factor = 0.5;
    int step_epochs = 25;

    double lr(int epoch) const; // epoch is 0-based
};

} // namespace jm
