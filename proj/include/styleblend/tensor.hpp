#ifndef STYLEBLEND_TENSOR_HPP
#define STYLEBLEND_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "styleblend/rng.hpp"

namespace styleblend {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        n *= static_cast<size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); i++) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One node of the reverse-mode tape. Interior nodes hold a closure that
// scatters this node's grad into its inputs' grads.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty = absent
    bool requires_grad = false;
    std::vector<NodePtr> inputs;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Thread-local: ops built while disabled record no graph (pure values).
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<TensorNode>();
        n->value.assign(shape_numel(shape), 0.0);
        n->shape = std::move(shape);
        return Tensor(n);
    }

    static Tensor full(Shape shape, double v) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.node_->value) x = v;
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<double> data) {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("from_data: shape " + shape_str(shape) + " does not match data length " +
                                        std::to_string(data.size()));
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(n);
    }

    static Tensor scalar(double v) { return from_data({1}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.node_->value) x = stddev * rng.normal();
        return t;
    }

    // Leaf parameter: participates in backward.
    static Tensor param(Shape shape, std::vector<double> data) {
        Tensor t = from_data(std::move(shape), std::move(data));
        t.node_->requires_grad = true;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t numel() const { return node_->value.size(); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    double item() const {
        if (numel() != 1) throw std::invalid_argument("item() requires a scalar tensor, got " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    // Value copy, no graph connection.
    Tensor detach() const {
        auto n = std::make_shared<TensorNode>();
        n->shape = node_->shape;
        n->value = node_->value;
        return Tensor(n);
    }

    Tensor clone_as_param() const {
        Tensor t = detach();
        t.set_requires_grad(true);
        return t;
    }

    void zero_grad() { node_->grad.clear(); }

    NodePtr node() const { return node_; }
    TensorNode* raw() const { return node_.get(); }

    uint64_t value_hash() const {
        return fnv1a64(node_->value.data(), node_->value.size() * sizeof(double));
    }

private:
    NodePtr node_;
};

namespace detail {

// Post-order DFS restricted to the grad-requiring subgraph.
inline void topo_collect(TensorNode* root, std::vector<TensorNode*>& order) {
    struct Frame {
        TensorNode* n;
        size_t next;
    };
    std::unordered_set<TensorNode*> seen;
    std::vector<Frame> stack;
    if (!root->requires_grad) return;
    stack.push_back({root, 0});
    seen.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->inputs.size()) {
            TensorNode* child = f.n->inputs[f.next++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Grads of every reachable
// grad-requiring node are reset first, so repeated calls on the same graph
// produce identical results. Leaves not reachable from the loss are untouched.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;  // nothing trainable below

    std::vector<TensorNode*> order;
    detail::topo_collect(loss.raw(), order);

    for (TensorNode* n : order) n->grad.assign(n->value.size(), 0.0);
    loss.raw()->grad[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

namespace detail {

// Interior-node constructor used by every op.
inline Tensor make_op_node(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                           std::function<void(TensorNode&)> backward_fn) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (grad_mode()) {
        bool any = false;
        for (const auto& t : inputs)
            if (t.requires_grad()) any = true;
        if (any) {
            n->requires_grad = true;
            n->inputs.reserve(inputs.size());
            for (auto& t : inputs) n->inputs.push_back(t.node());
            n->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(n);
}

inline void accumulate(TensorNode& dst, const std::vector<double>& g) {
    dst.ensure_grad();
    for (size_t i = 0; i < g.size(); i++) dst.grad[i] += g[i];
}

}  // namespace detail

}  // namespace styleblend

#endif
