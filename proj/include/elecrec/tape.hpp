#pragma once
// Reverse-mode autodiff tape. Ops append nodes in topological order; each node
// records its input ids and a gradient rule. One backward pass per tape.

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "elecrec/errors.hpp"
#include "elecrec/tensor.hpp"

namespace elec {

// Trainable parameter. Gradients accumulate across a backward pass and are
// zeroed by the optimizer step.
template <class S>
struct Param {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
    bool grad_populated = false;

    Param() = default;
    Param(std::string n, Tensor<S> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

    void zero_grad() {
        grad.fill(S(0));
        grad_populated = false;
    }
};

template <class S>
class Tape {
public:
    using BackwardFn = std::function<void(Tape<S>&)>;

    struct Node {
        Tensor<S> owned;            // value storage for non-leaf nodes
        Param<S>* param = nullptr;  // set for parameter leaves
        std::vector<int> inputs;
        BackwardFn backward;
        Tensor<S> grad;
        bool grad_live = false;
        bool requires_grad = false;
    };

    // Registers a parameter leaf. A parameter registered twice on the same
    // tape (e.g. a shared embedding table) maps to a single node so gradients
    // from every consumer accumulate together.
    int param(Param<S>& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return it->second;
        Node n;
        n.param = &p;
        n.requires_grad = true;
        nodes_.push_back(std::move(n));
        int id = static_cast<int>(nodes_.size()) - 1;
        param_nodes_.emplace(&p, id);
        params_.push_back(&p);
        return id;
    }

    // Non-trainable leaf.
    int constant(Tensor<S> t) {
        Node n;
        n.owned = std::move(t);
        n.requires_grad = false;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int emit(Tensor<S> value, std::vector<int> inputs, BackwardFn fn) {
        Node n;
        n.owned = std::move(value);
        n.inputs = std::move(inputs);
        n.backward = std::move(fn);
        for (int i : n.inputs)
            if (nodes_[static_cast<size_t>(i)].requires_grad) n.requires_grad = true;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor<S>& val(int id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.param ? n.param->value : n.owned;
    }

    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    // Gradient buffer for accumulation; allocated (zeroed) on first touch.
    Tensor<S>& grad_buf(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.param) {
            n.param->grad_populated = true;
            return n.param->grad;
        }
        if (!n.grad_live) {
            n.grad = Tensor<S>(n.owned.shape);
            n.grad_live = true;
        }
        return n.grad;
    }

    bool grad_live(int id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.param ? n.param->grad_populated : n.grad_live;
    }

    void backward(int loss_id) {
        if (consumed_) throw TapeError("backward: tape already consumed; one backward pass per tape");
        const Tensor<S>& loss = val(loss_id);
        if (loss.numel() != 1)
            throw TapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape));
        consumed_ = true;
        grad_buf(loss_id).data[0] = S(1);
        for (int i = loss_id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.backward && n.grad_live && n.requires_grad) n.backward(*this);
        }
    }

    bool consumed() const { return consumed_; }
    size_t size() const { return nodes_.size(); }

    // Parameters registered on this tape, in registration order.
    const std::vector<Param<S>*>& params() const { return params_; }

    // Parameters that actually received gradients in the backward pass.
    std::vector<Param<S>*> touched_params() const {
        std::vector<Param<S>*> out;
        for (Param<S>* p : params_)
            if (p->grad_populated) out.push_back(p);
        return out;
    }

private:
    std::vector<Node> nodes_;
    std::unordered_map<const Param<S>*, int> param_nodes_;
    std::vector<Param<S>*> params_;
    bool consumed_ = false;
};

}  // namespace elec
