#include "jointmotion/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace jm {

namespace {
thread_local bool g_grad_enabled = true;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

double Var::item() const {
    if (rows() != 1 || cols() != 1) throw std::invalid_argument("item() on non-scalar " + value().shape_string());
    return value()(0, 0);
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    Var out(std::move(value), false);
    if (!g_grad_enabled) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node());
    out.node_->backward_fn = std::move(fn);
    return out;
}

namespace {

std::vector<Node*> topological_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS: graphs can be thousands of nodes deep.
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent && parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

void run_backward(Node* root) {
    const auto order = topological_order(root);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // Intermediate gradients are not needed after propagation; leaves keep theirs.
    for (Node* n : order)
        if (n->backward_fn) n->grad = Tensor();
}

} // namespace

void backward(const Var& root) {
    if (root.rows() != 1 || root.cols() != 1)
        throw std::invalid_argument("backward() needs a scalar root, got " + root.value().shape_string());
    backward(root, Tensor(1, 1, 1.0));
}

void backward(const Var& root, const Tensor& upstream) {
    if (!root.requires_grad()) return;
    if (!upstream.same_shape(root.value())) throw std::invalid_argument("backward(): upstream shape mismatch");
    Node* n = root.node().get();
    Tensor& g = n->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g.data()[i] += upstream.data()[i];
    run_backward(n);
}

} // namespace jm
