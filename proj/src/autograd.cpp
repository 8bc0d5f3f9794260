#include "fad/autograd.hpp"

#include <sstream>

namespace fad::nn {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Var<T> Graph<T>::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::input(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = grad_enabled();
    return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    if (grad_enabled()) {
        n.requires_grad = true;
        if (p.grad.shape() != p.value.shape()) {
            p.zero_grad();
        }
        n.grad_sink = &p.grad;
    }
    return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::view(const Tensor<T>& value) {
    Node n;
    n.external = &value;
    return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::initializer_list<Var<T>> parents,
                        BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    if (grad_enabled()) {
        for (const auto& p : parents) {
            if (nodes_[p.id()].requires_grad) {
                n.requires_grad = true;
                break;
            }
        }
        if (n.requires_grad) {
            n.backward = std::move(fn);
        }
    }
    return push(std::move(n));
}

template <typename T>
const Tensor<T>& Graph<T>::value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad_sink) {
        return *n.grad_sink;
    }
    if (n.grad.size() != value(id).size()) {
        n.grad = Tensor<T>(value(id).shape());
    }
    return n.grad;
}

template <typename T>
Tensor<T> Graph<T>::grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.grad_sink) {
        return *n.grad_sink;
    }
    if (n.grad.size() != value(id).size()) {
        return Tensor<T>(value(id).shape());
    }
    return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> root) {
    require(root.value().size() == 1, "backward root must be a scalar");
    require(grad_enabled(), "backward on a graph built with gradients disabled");
    if (!nodes_[root.id()].requires_grad) {
        return;
    }
    for (auto& n : nodes_) {
        n.grad = Tensor<T>();
    }
    grad_buffer(root.id())[0] += T{1};
    // A non-empty gradient buffer marks a node reached from the root.
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && n.grad.size() != 0) {
            n.backward(n.grad);
        }
    }
}

template class Graph<float>;
template class Graph<double>;

} // namespace fad::nn
