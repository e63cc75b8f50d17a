#pragma once
// Reverse-mode autodiff tape. One Graph owns the nodes of one forward pass;
// ops append nodes and register a backward closure. backward() sweeps nodes in
// descending creation order (a valid reverse topological order, since inputs
// always precede outputs) and finally folds leaf gradients into their bound
// Parameters in ascending node-id order, so accumulation is deterministic.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "globalmind/tensor.hpp"

namespace globalmind {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor<T>::zeros(value.shape)) {}

    void zero_grad() { grad.fill(T(0)); }
};

template <class T>
class Graph;

// Lightweight handle to a node; ops take and return these by value.
template <class T>
struct Var {
    Graph<T>* graph = nullptr;
    int id = -1;

    const Tensor<T>& val() const;
    const Shape& shape() const { return val().shape; }
};

template <class T>
class Graph {
  public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;  // allocated per backward sweep
        std::vector<int> ins;
        std::function<void(Graph&, Node&)> back;  // reads this node's grad, adds into inputs'
        Parameter<T>* bound = nullptr;
    };

    // Constant leaf. Input data must already be finite.
    Var<T> constant(Tensor<T> v, const char* what = "constant") {
        return append(std::move(v), {}, nullptr, what);
    }

    // Parameter leaf; backward adds this leaf's gradient into p.grad. Staging
    // the same Parameter more than once (shared weights) sums contributions.
    Var<T> param(Parameter<T>& p) {
        Var<T> v = append(p.value, {}, nullptr, p.name.empty() ? "parameter" : p.name.c_str());
        nodes_[static_cast<size_t>(v.id)].bound = &p;
        return v;
    }

    Var<T> append(Tensor<T> value, std::vector<int> ins,
                  std::function<void(Graph&, Node&)> back, const char* op) {
        if (!value.all_finite())
            throw NumericError(std::string(op) + " produced non-finite values");
        Node n;
        n.value = std::move(value);
        n.ins = std::move(ins);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
    }

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    size_t size() const { return nodes_.size(); }

    // Accumulates d(loss)/d(parameter) into every staged Parameter's grad.
    // Node gradients are reset on entry, so a second call adds the same
    // contribution again (gradients double without an intervening zero_grad).
    void backward(Var<T> loss) {
        if (loss.graph != this || loss.id < 0 || loss.id >= static_cast<int>(nodes_.size()))
            throw UsageError("backward: loss does not belong to this graph");
        Node& ln = nodes_[static_cast<size_t>(loss.id)];
        if (ln.value.numel() != 1)
            throw UsageError("backward requires a scalar loss, got shape " +
                             shape_str(ln.value.shape));
        for (int id = 0; id <= loss.id; ++id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            n.grad = Tensor<T>::zeros(n.value.shape);
        }
        ln.grad.data[0] = T(1);
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.back) n.back(*this, n);
        }
        for (int id = 0; id <= loss.id; ++id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.bound) continue;
            for (int64_t i = 0; i < n.grad.numel(); ++i) n.bound->grad[i] += n.grad[i];
        }
    }

    // Gradient of the last backward() at a given node (tests and grad checks).
    const Tensor<T>& grad(Var<T> v) const { return nodes_[static_cast<size_t>(v.id)].grad; }

  private:
    std::vector<Node> nodes_;
};

template <class T>
const Tensor<T>& Var<T>::val() const {
    return graph->value(id);
}

}  // namespace globalmind
