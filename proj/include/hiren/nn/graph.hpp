#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hiren/nn/tensor.hpp"

namespace hiren::nn {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    void zero_grad() {
        if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
        else grad.fill(T(0));
    }
};

// Define-by-run reverse-mode tape. Nodes are created in topological order;
// backward() walks them in reverse. Construct with grad_enabled=false for
// inference: bound parameters become constants and ops skip their stashes.
template <typename T>
class Graph {
public:
    using BackFn = std::function<void(Graph&, int)>;

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    int leaf(Tensor<T> v, bool needs_grad = false) {
        nodes_.push_back(Node{std::move(v), Tensor<T>(), nullptr, grad_enabled_ && needs_grad});
        return static_cast<int>(nodes_.size()) - 1;
    }

    int constant(Tensor<T> v) { return leaf(std::move(v), false); }

    // Trainable leaf; after backward() the accumulated gradient is flushed
    // into p.grad.
    int bind(Parameter<T>& p) {
        int id = leaf(p.value, true);
        if (grad_enabled_) bindings_.emplace_back(id, &p);
        return id;
    }

    int node(Tensor<T> v, std::initializer_list<int> parents, BackFn fn) {
        bool ng = false;
        for (int p : parents) ng = ng || nodes_[static_cast<size_t>(p)].needs_grad;
        nodes_.push_back(Node{std::move(v), Tensor<T>(), ng ? std::move(fn) : nullptr, ng});
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    Tensor<T>& mutable_value(int id) { return nodes_[static_cast<size_t>(id)].value; }
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    bool grad_enabled() const { return grad_enabled_; }

    // Gradient buffer, allocated (zeroed) on first access.
    Tensor<T>& grad(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    bool has_grad(int id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.grad.size() == n.value.size();
    }

    void backward(int root) {
        if (!grad_enabled_) throw std::logic_error("backward() on an inference graph");
        Node& r = nodes_[static_cast<size_t>(root)];
        if (r.value.size() != 1) throw ShapeError("backward root must be a scalar");
        if (!r.needs_grad) return;
        grad(root).fill(T(1));
        for (int id = root; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.needs_grad && n.backward && has_grad(id)) n.backward(*this, id);
        }
        for (auto& [id, p] : bindings_) {
            if (!has_grad(id)) continue;
            if (p->grad.size() != p->value.size()) p->grad = Tensor<T>(p->value.shape());
            const Tensor<T>& gsrc = nodes_[static_cast<size_t>(id)].grad;
            for (int64_t i = 0; i < gsrc.size(); ++i) p->grad[i] += gsrc[i];
        }
    }

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        BackFn backward;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    std::vector<std::pair<int, Parameter<T>*>> bindings_;
    bool grad_enabled_;
};

}  // namespace hiren::nn
