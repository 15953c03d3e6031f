#pragma once

// Minimal tape-free reverse-mode autodiff. Each Var points at a Node that
// remembers its parents and a closure that pushes its gradient into them; the
// graph lives exactly as long as the Vars that reference it.

#include "jointmotion/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace jm {

struct Node {
    Tensor value;
    Tensor grad; // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    // Gradient buffer shaped like value, zero-initialized on first use.
    Tensor& grad_buffer() {
        if (grad.empty() && !value.empty()) grad = Tensor(value.rows(), value.cols());
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    int rows() const { return node_->value.rows(); }
    int cols() const { return node_->value.cols(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    double item() const;

    void zero_grad();

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    friend Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn);
    std::shared_ptr<Node> node_;
};

// Builds an op result. The closure is recorded only when gradient mode is on
// and at least one parent requires a gradient.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn);

// Seeds d(root)/d(root) = 1 (root must be 1x1) and propagates to every
// reachable node that requires a gradient. Leaf gradients accumulate.
void backward(const Var& root);

// Same, with an explicit upstream gradient shaped like root.
void backward(const Var& root, const Tensor& upstream);

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

} // namespace jm
