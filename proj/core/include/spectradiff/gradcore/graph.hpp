#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "spectradiff/gradcore/tensor.hpp"

namespace spectradiff {

/// Dynamic tape of executed differentiable ops.
///
/// Ops append a node when recording is on and at least one input requires
/// grad; nodes are therefore stored in topological order. A Graph and the
/// tensors it records belong to one execution context at a time.
class Graph {
public:
    enum class Mode { record, inference };

    explicit Graph(Mode mode = Mode::record) : mode_(mode) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    bool recording() const noexcept { return mode_ == Mode::record; }

    /// True when an op over `inputs` must be recorded.
    bool tracks(std::initializer_list<const Tensor*> inputs) const;

    /// Append a node. `backward` reads output.grad() and accumulates into the
    /// grads of inputs that require grad.
    void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward);

    /// Reverse sweep from a scalar loss. Intermediate grads are cleared first,
    /// so repeated calls accumulate only into leaves.
    void backward(const Tensor& loss);

    /// Drop all recorded nodes.
    void reset() noexcept { nodes_.clear(); }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        std::vector<Tensor> inputs;
        Tensor output;
        std::function<void()> backward;
    };

    Mode mode_;
    std::vector<Node> nodes_;
};

}  // namespace spectradiff
