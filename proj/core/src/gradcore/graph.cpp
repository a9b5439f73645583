#include "spectradiff/gradcore/graph.hpp"

#include <algorithm>

#include "spectradiff/errors.hpp"

namespace spectradiff {

bool Graph::tracks(std::initializer_list<const Tensor*> inputs) const {
    if (!recording()) {
        return false;
    }
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t != nullptr && t->requires_grad(); });
}

void Graph::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
    output.set_requires_grad(true);
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("Graph::backward: loss must be a scalar tensor");
    }
    auto produced = std::find_if(nodes_.rbegin(), nodes_.rend(),
                                 [&](const Node& n) { return n.output.same_storage(loss); });
    if (produced == nodes_.rend()) {
        throw ContractError("Graph::backward: loss was not produced by an op on this graph");
    }
    for (auto& node : nodes_) {
        node.output.zero_grad();
    }
    loss.grad()[0] = 1.0;
    for (auto it = produced; it != nodes_.rend(); ++it) {
        it->backward();
    }
}

}  // namespace spectradiff
