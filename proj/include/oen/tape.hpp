#pragma once

#include <functional>
#include <vector>

#include "oen/tensor.hpp"

namespace oen {

class GradTape;

// Handle to a node recorded on a GradTape.
struct Var {
    GradTape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
};

// Gradients of one backward pass, keyed by parameter id (registration order).
class Gradients {
public:
    const Tensor& for_param(int param_id) const;
    int count() const { return static_cast<int>(grads_.size()); }

private:
    friend class GradTape;
    std::vector<Tensor> grads_;
};

// Reverse-mode tape. Records primitive operations during the forward pass and
// replays them backward once to produce the gradient of a scalar loss with
// respect to every registered parameter. A tape is confined to one training
// thread and is reset between steps.
class GradTape {
public:
    // upstream: gradient of the loss w.r.t. this node's output.
    // node_grads: per-node gradient slots; implementations accumulate into
    // their inputs' slots via grad_slot().
    using BackwardFn = std::function<void(GradTape&, const Tensor& upstream, std::vector<Tensor>& node_grads)>;

    // Registers a trainable parameter (copies the current value).
    Var param(const Tensor& value);
    // Records a value that receives no gradient.
    Var constant(Tensor value);
    // Records an operation node.
    Var node(Tensor value, std::vector<int> inputs, BackwardFn backward);

    // Runs the backward pass from a scalar loss. Consumes the tape: a second
    // call without reset() throws.
    Gradients backward(Var loss);

    void reset();

    int num_nodes() const { return static_cast<int>(nodes_.size()); }
    int num_params() const { return static_cast<int>(param_nodes_.size()); }
    const Tensor& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    // True when a parameter lies upstream of this node; backward functions may
    // skip gradient work for inputs where this is false.
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
    bool consumed() const { return consumed_; }

    // Fetches the gradient slot for node `id`, allocating zeros on first use.
    static Tensor& grad_slot(std::vector<Tensor>& node_grads, int id, const std::vector<int>& shape);

private:
    struct Node {
        Tensor value;
        std::vector<int> inputs;
        BackwardFn backward;
        int param_id = -1;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    std::vector<int> param_nodes_;
    bool consumed_ = false;
};

}  // namespace oen
