#pragma once

// N-dimensional tensors with reverse-mode automatic differentiation.
// Tensors are handles to shared nodes; operations (ops.hpp) record the
// graph while gradients are enabled, and backward() walks it in reverse
// topological order. Scalar type is a template parameter: float is the
// working precision, double is used for finite-difference checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace ebus3d {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline void check_shape_valid(const Shape& shape) {
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] <= 0) {
            throw std::invalid_argument("tensor: extent of axis " + std::to_string(i) +
                                        " must be positive, got " + std::to_string(shape[i]));
        }
    }
}

// Thread-local switch: when disabled, ops run forward-only and record no graph.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

class NoGradGuard {
public:
    NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename S>
struct TensorNode {
    Shape shape;
    std::vector<S> value;
    bool requires_grad = false;
    std::vector<S> grad;  // sized lazily, same length as value
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // reads this->grad, accumulates into parents

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), S(0));
    }
};

template <typename S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;

    explicit Tensor(Shape shape) : node_(std::make_shared<TensorNode<S>>()) {
        check_shape_valid(shape);
        node_->shape = std::move(shape);
        node_->value.assign(static_cast<std::size_t>(ebus3d::numel(node_->shape)), S(0));
    }

    Tensor(Shape shape, std::vector<S> data, bool requires_grad = false)
        : node_(std::make_shared<TensorNode<S>>()) {
        check_shape_valid(shape);
        if (static_cast<std::int64_t>(data.size()) != ebus3d::numel(shape)) {
            throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t(std::move(shape));
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(Shape shape, S v, bool requires_grad = false) {
        Tensor t(std::move(shape));
        std::fill(t.node_->value.begin(), t.node_->value.end(), v);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t dim() const { return static_cast<std::int64_t>(node_->shape.size()); }
    std::int64_t size() const { return node_->size(); }
    std::int64_t extent(std::int64_t axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }

    std::vector<S>& data() { return node_->value; }
    const std::vector<S>& data() const { return node_->value; }
    S* data_ptr() { return node_->value.data(); }
    const S* data_ptr() const { return node_->value.data(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool f) {
        node_->requires_grad = f;
        if (f) node_->ensure_grad();
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<S>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<S>& grad() const { return node_->grad; }
    void zero_grad() { node_->zero_grad(); }

    S item() const {
        if (size() != 1) {
            throw std::invalid_argument("item(): tensor has " + std::to_string(size()) +
                                        " elements, expected 1");
        }
        return node_->value[0];
    }

    S& operator[](std::int64_t i) { return node_->value[static_cast<std::size_t>(i)]; }
    const S& operator[](std::int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }

    // Flat offset of a multi-dimensional index (row-major layout).
    std::int64_t offset(const Shape& idx) const {
        const Shape& sh = node_->shape;
        if (idx.size() != sh.size()) {
            throw std::invalid_argument("offset(): rank mismatch");
        }
        std::int64_t flat = 0;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (idx[k] < 0 || idx[k] >= sh[k]) {
                throw std::out_of_range("offset(): index out of bounds on axis " + std::to_string(k));
            }
            flat = flat * sh[k] + idx[k];
        }
        return flat;
    }

    S at(const Shape& idx) const { return node_->value[static_cast<std::size_t>(offset(idx))]; }
    void set(const Shape& idx, S v) { node_->value[static_cast<std::size_t>(offset(idx))] = v; }

    bool all_finite() const {
        for (S v : node_->value) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    // Detached value copy, no graph, no grad.
    Tensor detach() const { return Tensor(node_->shape, node_->value, false); }

    std::shared_ptr<TensorNode<S>> node() const { return node_; }

    static Tensor from_node(std::shared_ptr<TensorNode<S>> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<TensorNode<S>> node_;
};

namespace detail {

// Post-order over the graph, iterative (graphs can be thousands of nodes deep).
template <typename S>
void topo_order(const std::shared_ptr<TensorNode<S>>& root,
                std::vector<std::shared_ptr<TensorNode<S>>>& order) {
    std::unordered_set<const TensorNode<S>*> seen;
    std::vector<std::pair<std::shared_ptr<TensorNode<S>>, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            auto child = node->parents[next_child++];
            if (child && seen.insert(child.get()).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Grads accumulate; callers reset
// them between independent backward passes via zero_grad.
template <typename S>
void backward(const Tensor<S>& loss) {
    if (loss.size() != 1) {
        throw std::invalid_argument("backward(): loss must be a scalar tensor, got shape " +
                                    shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw std::invalid_argument("backward(): loss does not require grad (no graph attached)");
    }
    std::vector<std::shared_ptr<TensorNode<S>>> order;
    detail::topo_order(loss.node(), order);

    // Interior nodes are scratch space for this sweep; only leaf tensors
    // (parameters, inputs) accumulate across repeated backward calls.
    for (auto& n : order) {
        if (n->backprop) n->zero_grad();
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] += S(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<S>& n = **it;
        if (n.backprop && !n.grad.empty()) n.backprop(n);
    }
}

// Deterministic RNG for weight init, augmentation and synthesis. Seeded
// explicitly everywhere; never touches global state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}
    Rng(std::uint64_t seed, std::uint64_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
        gen_.seed(seq);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(gen_);
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen_);
    }
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive bounds
        std::uniform_int_distribution<std::int64_t> d(lo, hi);
        return d(gen_);
    }
    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

template <typename S>
Tensor<S> randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = static_cast<S>(rng.normal(0.0, stddev));
    return t;
}

}  // namespace ebus3d
