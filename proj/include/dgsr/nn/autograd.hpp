#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "dgsr/nn/tensor.hpp"

namespace dgsr::nn {

// One value in a dynamically recorded computation graph. Leaves with
// requires_grad set are trainable parameters; interior nodes carry a
// backward function that scatters their gradient into their parents.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& grad_buffer() {
        if (!has_grad) {
            grad = Tensor<T>(value.shape);
            has_grad = true;
        }
        return grad;
    }

    void clear_grad() {
        grad = Tensor<T>();
        has_grad = false;
    }

    const Shape& shape() const { return value.shape; }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return n;
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

// Value copy that is cut off from the graph.
template <typename T>
Var<T> detach(const Var<T>& v) {
    return constant(v->value);
}

namespace detail {

template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

template <typename T>
bool wants(const Var<T>& v) {
    return v && v->requires_grad;
}

} // namespace detail

// Reverse-mode sweep from a scalar root. Gradients accumulate into every
// reachable node with requires_grad, including parameter leaves.
template <typename T>
void backward(const Var<T>& root) {
    if (root->value.size() != 1) {
        throw InputError("backward() requires a scalar root, got " + shape_str(root->value.shape));
    }
    if (!root->requires_grad) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer().data[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->has_grad) n->backward_fn(*n);
    }
}

template <typename T>
void zero_grad(std::span<const Var<T>> params) {
    for (const auto& p : params) p->clear_grad();
}

} // namespace dgsr::nn
