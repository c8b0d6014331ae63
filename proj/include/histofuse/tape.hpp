#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/tensor.hpp"

namespace histofuse {

/// Node index on a tape. Construction order is topological by definition:
/// an op can only reference nodes that already exist.
using NodeId = std::size_t;

/// Record of one forward pass: values plus per-node backward closures.
/// backward() replays the record once, in reverse topological order, and
/// accumulates gradients; gradients of leaves created with requires_grad
/// are then available through grad().
template <typename T>
class Tape {
public:
    NodeId leaf(Tensor<T> value) {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), {}, nullptr});
        return nodes_.size() - 1;
    }

    /// Used by ops: appends a computed node with its backward closure.
    /// The closure receives the tape and this node's id; it must read
    /// grad(id) and accumulate into grad(parent) for each parent.
    NodeId push(Tensor<T> value, std::vector<NodeId> parents,
                std::function<void(Tape&, NodeId)> backprop) {
        for (const NodeId p : parents) {
            if (p >= nodes_.size()) throw ShapeError("tape op references a node that does not exist");
        }
        nodes_.push_back(Node{std::move(value), Tensor<T>(), std::move(parents), std::move(backprop)});
        return nodes_.size() - 1;
    }

    const Tensor<T>& value(NodeId id) const { return nodes_[id].value; }
    Tensor<T>& value(NodeId id) { return nodes_[id].value; }

    /// Gradient of the last backward()'s loss with respect to node `id`.
    const Tensor<T>& grad(NodeId id) const { return nodes_[id].grad; }
    Tensor<T>& grad(NodeId id) { return nodes_[id].grad; }

    std::size_t size() const { return nodes_.size(); }

    /// Reverse-mode sweep from a scalar loss node. Every node at or below
    /// `loss` is visited exactly once, in reverse construction order.
    /// Parameters not reachable from the loss simply keep zero gradients.
    void backward(NodeId loss) {
        if (loss >= nodes_.size()) throw ShapeError("backward: loss node does not exist");
        if (nodes_[loss].value.numel() != 1)
            throw ShapeError("backward: loss must be scalar, got shape " +
                             nodes_[loss].value.shape_string());
        for (auto& n : nodes_) n.grad = Tensor<T>(n.value.shape());
        nodes_[loss].grad[0] = T(1);
        for (NodeId id = loss + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.backprop) n.backprop(*this, id);
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<NodeId> parents;
        std::function<void(Tape&, NodeId)> backprop;
    };

    std::vector<Node> nodes_;
};

}  // namespace histofuse
