#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "fad/tensor.hpp"

namespace fad::nn {

template <typename T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Graph<T>* g, std::size_t id) : graph_(g), id_(id) {}

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t i) const { return value().dim(i); }
    std::size_t rank() const { return value().rank(); }
    bool requires_grad() const;
    // Gradient accumulated by the last backward pass (zeros if none reached it).
    Tensor<T> grad() const;

    Graph<T>& graph() const { return *graph_; }
    std::size_t id() const { return id_; }

private:
    Graph<T>* graph_ = nullptr;
    std::size_t id_ = 0;
};

enum class GradMode { enabled, disabled };

// Tape for reverse-mode differentiation. Nodes are appended in evaluation
// order, so reverse insertion order is a valid topological order.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(const Tensor<T>& out_grad)>;

    explicit Graph(GradMode mode = GradMode::enabled) : mode_(mode) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const { return mode_ == GradMode::enabled; }

    Var<T> constant(Tensor<T> value);
    // Leaf that records a gradient (readable through Var::grad()).
    Var<T> input(Tensor<T> value);
    // Leaf aliasing a Parameter: its value is not copied and backward
    // accumulates straight into p.grad.
    Var<T> param(Parameter<T>& p);
    // Leaf aliasing an external tensor without gradient.
    Var<T> view(const Tensor<T>& value);

    // Records an op result. `fn` is kept only if some parent needs a gradient.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn);

    // Seeds d(root)/d(root) = 1 (root must hold one element) and propagates.
    void backward(Var<T> root);

    const Tensor<T>& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    // Mutable gradient buffer of node `id`, allocated as zeros on first use.
    Tensor<T>& grad_buffer(std::size_t id);
    Tensor<T> grad(std::size_t id) const;
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* external = nullptr;
        Tensor<T> grad;
        Tensor<T>* grad_sink = nullptr;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var<T> push(Node node);

    GradMode mode_;
    std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return graph_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
    return graph_->requires_grad(id_);
}

template <typename T>
Tensor<T> Var<T>::grad() const {
    return graph_->grad(id_);
}

extern template class Graph<float>;
extern template class Graph<double>;

} // namespace fad::nn
