#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "drfuser/errors.hpp"

namespace drfuser {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename Real>
class Tensor;

namespace detail {

template <typename Real>
struct Node {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // empty until first written
    bool requires_grad = false;
    std::uint64_t seq = 0;   // creation order; inputs always precede outputs
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
    std::vector<Real>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
        return grad;
    }
};

std::uint64_t next_sequence();

}  // namespace detail

// Graph recording toggle for the current thread. Each training thread records
// its own graph; nothing is shared between threads.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense row-major tensor handle. Copies share the underlying node (data,
// grad and graph edges); use clone() for an independent leaf copy.
template <typename Real>
class Tensor {
public:
    using value_type = Real;
    using NodePtr = std::shared_ptr<detail::Node<Real>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, Real value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<Real> data,
                            bool requires_grad = false);
    static Tensor scalar(Real value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<Real> data() { return node_->data; }
    std::span<const Real> data() const { return node_->data; }
    const std::vector<Real>& values() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->grad.empty(); }
    std::span<const Real> grad() const { return node_->grad; }
    std::span<Real> grad_mut() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    Real item() const;
    Real& operator[](std::size_t i) { return node_->data[i]; }
    Real operator[](std::size_t i) const { return node_->data[i]; }

    // Independent leaf with copied data and no graph history.
    Tensor clone(bool requires_grad = false) const;

    // Reverse-mode sweep from this scalar. Leaf grads accumulate across
    // calls; interior grads are recomputed each call.
    void backward() const;

    const char* op_name() const { return node_->op; }
    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// Ordered record of the executed ops reachable from a root, in execution
// (creation) order. Every op appears after the ops producing its inputs.
template <typename Real>
class Tape {
public:
    explicit Tape(const Tensor<Real>& root);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<detail::Node<Real>*>& nodes() const { return nodes_; }
    bool is_topological() const;

private:
    std::vector<detail::Node<Real>*> nodes_;
};

namespace detail {

// Builds an op result. When recording is on and any parent requires grad the
// result keeps the parents and backward rule; otherwise it is a plain leaf.
template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> data, const char* op,
                         std::initializer_list<Tensor<Real>> parents,
                         std::function<void(Node<Real>&)> backward_fn);

template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> data, const char* op,
                         const std::vector<Tensor<Real>>& parents,
                         std::function<void(Node<Real>&)> backward_fn);

// Adds src into t's grad if t participates in differentiation.
template <typename Real>
void accumulate_grad(Node<Real>& t, std::span<const Real> src);

}  // namespace detail

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace drfuser
