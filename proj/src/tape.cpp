#include "oen/tape.hpp"

#include <stdexcept>

namespace oen {

const Tensor& Var::value() const {
    if (!valid()) throw std::logic_error("Var: dereferencing an invalid handle");
    return tape->value_of(id);
}

const Tensor& Gradients::for_param(int param_id) const {
    if (param_id < 0 || param_id >= count()) {
        throw std::invalid_argument("Gradients: unknown parameter id " + std::to_string(param_id));
    }
    return grads_[static_cast<std::size_t>(param_id)];
}

Var GradTape::param(const Tensor& value) {
    Node n;
    n.value = value;
    n.param_id = static_cast<int>(param_nodes_.size());
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_nodes_.push_back(id);
    return Var{this, id};
}

Var GradTape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var GradTape::node(Tensor value, std::vector<int> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    for (int in : n.inputs) {
        if (in < 0 || in >= num_nodes()) throw std::invalid_argument("GradTape::node: input id out of range");
        if (nodes_[static_cast<std::size_t>(in)].needs_grad) n.needs_grad = true;
    }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& GradTape::grad_slot(std::vector<Tensor>& node_grads, int id, const std::vector<int>& shape) {
    Tensor& g = node_grads[static_cast<std::size_t>(id)];
    if (g.empty()) g = Tensor(shape, 0.0);
    return g;
}

Gradients GradTape::backward(Var loss) {
    if (consumed_) throw std::logic_error("GradTape::backward: tape already consumed; reset() before reuse");
    if (loss.tape != this || loss.id < 0 || loss.id >= num_nodes()) {
        throw std::invalid_argument("GradTape::backward: loss does not belong to this tape");
    }
    if (value_of(loss.id).size() != 1) {
        throw std::invalid_argument("GradTape::backward: loss must be scalar, got shape " +
                                    value_of(loss.id).shape_str());
    }
    consumed_ = true;

    std::vector<Tensor> node_grads(nodes_.size());
    grad_slot(node_grads, loss.id, value_of(loss.id).shape())[0] = 1.0;

    for (int id = loss.id; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) continue;
        if (node_grads[static_cast<std::size_t>(id)].empty()) continue;
        if (n.backward) n.backward(*this, node_grads[static_cast<std::size_t>(id)], node_grads);
    }

    Gradients out;
    out.grads_.reserve(param_nodes_.size());
    for (int pid : param_nodes_) {
        Tensor& g = node_grads[static_cast<std::size_t>(pid)];
        if (g.empty()) g = Tensor(value_of(pid).shape(), 0.0);
        out.grads_.push_back(std::move(g));
    }
    return out;
}

void GradTape::reset() {
    nodes_.clear();
    param_nodes_.clear();
    consumed_ = false;
}

}  // namespace oen
