#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "frcnet/tensor.hpp"

namespace frcnet {

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents that require grad.
    std::function<void(Node&)> backward_fn;

    Tensor<T>& ensure_grad() {
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }
    Node& parent(std::size_t i) { return *parents[i]; }
};

/// Handle to a node of the dynamic computation graph.
template <typename T>
class Var {
public:
    Var() : node_(std::make_shared<Node<T>>()) {}
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->ensure_grad(); }
    Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    T item() const { return node_->value[0]; }

    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.fill(T{0});
    }
    /// Same value, cut from the graph.
    Var detach() const { return Var(node_->value, false); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& shared() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Creates an op result. The backward closure is retained only when grad mode is
/// on and some input requires grad.
template <typename T>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn) {
    Var<T> out(std::move(value), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    Node<T>& n = *out.node();
    n.requires_grad = true;
    for (const auto& in : inputs) n.parents.push_back(in.shared());
    n.backward_fn = std::move(backward_fn);
    return out;
}

template <typename T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs,
                   std::function<void(Node<T>&)> backward_fn) {
    Var<T> out(std::move(value), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    Node<T>& n = *out.node();
    n.requires_grad = true;
    for (const auto& in : inputs) n.parents.push_back(in.shared());
    n.backward_fn = std::move(backward_fn);
    return out;
}

/// Reverse-mode sweep from a scalar root. Gradients accumulate into leaves.
template <typename T>
void backward(const Var<T>& root) {
    if (root.size() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<T>* n : order)
        if (n->backward_fn) n->ensure_grad().fill(T{0});
    root.node()->ensure_grad()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

} // namespace frcnet
