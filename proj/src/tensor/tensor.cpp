#include "drfuser/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace drfuser {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_sequence{0};
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

namespace detail {

std::uint64_t next_sequence() { return g_sequence.fetch_add(1, std::memory_order_relaxed) + 1; }

template <typename Real>
static Tensor<Real> make_result_impl(Shape shape, std::vector<Real> data, const char* op,
                                     const Tensor<Real>* first, std::size_t count,
                                     std::function<void(Node<Real>&)>&& backward_fn) {
    if (shape_numel(shape) != data.size())
        throw DimensionError(std::string(op) + ": result shape " + shape_str(shape) +
                             " does not match " + std::to_string(data.size()) + " values");
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->seq = next_sequence();
    node->op = op;
    bool needs = false;
    if (GradMode::enabled()) {
        for (std::size_t i = 0; i < count; ++i)
            if (first[i].defined() && first[i].requires_grad()) needs = true;
    }
    if (needs) {
        node->requires_grad = true;
        for (std::size_t i = 0; i < count; ++i)
            if (first[i].defined()) node->parents.push_back(first[i].node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> data, const char* op,
                         std::initializer_list<Tensor<Real>> parents,
                         std::function<void(Node<Real>&)> backward_fn) {
    return make_result_impl<Real>(std::move(shape), std::move(data), op, parents.begin(),
                                  parents.size(), std::move(backward_fn));
}

template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> data, const char* op,
                         const std::vector<Tensor<Real>>& parents,
                         std::function<void(Node<Real>&)> backward_fn) {
    return make_result_impl<Real>(std::move(shape), std::move(data), op, parents.data(),
                                  parents.size(), std::move(backward_fn));
}

template <typename Real>
void accumulate_grad(Node<Real>& t, std::span<const Real> src) {
    if (!t.requires_grad) return;
    auto& g = t.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

}  // namespace detail

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, Real(0), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(const Shape& shape, Real value, bool requires_grad) {
    return from_data(shape, std::vector<Real>(shape_numel(shape), value), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::from_data(const Shape& shape, std::vector<Real> data,
                                     bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    auto node = std::make_shared<detail::Node<Real>>();
    node->shape = shape;
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    node->seq = detail::next_sequence();
    return Tensor(std::move(node));
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value, bool requires_grad) {
    return from_data(Shape{}, {value}, requires_grad);
}

template <typename Real>
std::size_t Tensor<Real>::dim(std::size_t axis) const {
    if (axis >= rank())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape()));
    return node_->shape[axis];
}

template <typename Real>
Real Tensor<Real>::item() const {
    if (numel() != 1)
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename Real>
Tensor<Real> Tensor<Real>::clone(bool requires_grad) const {
    return from_data(shape(), node_->data, requires_grad);
}

template <typename Real>
void Tensor<Real>::backward() const {
    if (!node_ || numel() != 1)
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (node_ ? shape_str(shape()) : std::string("<undefined>")));
    if (!node_->requires_grad)
        throw ContractError("backward() on a tensor that does not require grad");
    Tape<Real> tape(*this);
    const auto& nodes = tape.nodes();
    for (auto* n : nodes)
        if (!n->is_leaf()) n->grad.assign(n->data.size(), Real(0));
    node_->ensure_grad()[0] += Real(1);
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        auto* n = *it;
        if (!n->is_leaf() && n->backward_fn) n->backward_fn(*n);
    }
}

template <typename Real>
Tape<Real>::Tape(const Tensor<Real>& root) {
    std::unordered_set<const detail::Node<Real>*> seen;
    std::vector<detail::Node<Real>*> stack{root.node().get()};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        nodes_.push_back(n);
        for (auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(nodes_.begin(), nodes_.end(),
              [](const auto* a, const auto* b) { return a->seq < b->seq; });
}

template <typename Real>
bool Tape<Real>::is_topological() const {
    std::unordered_set<const detail::Node<Real>*> done;
    for (auto* n : nodes_) {
        for (auto& p : n->parents)
            if (p->requires_grad && !done.count(p.get())) return false;
        done.insert(n);
    }
    return true;
}

#define DRFUSER_INSTANTIATE(Real)                                                          \
    template class Tensor<Real>;                                                           \
    template class Tape<Real>;                                                             \
    template Tensor<Real> detail::make_result<Real>(Shape, std::vector<Real>, const char*, \
                                                    std::initializer_list<Tensor<Real>>,   \
                                                    std::function<void(detail::Node<Real>&)>); \
    template Tensor<Real> detail::make_result<Real>(Shape, std::vector<Real>, const char*, \
                                                    const std::vector<Tensor<Real>>&,      \
                                                    std::function<void(detail::Node<Real>&)>); \
    template void detail::accumulate_grad<Real>(detail::Node<Real>&, std::span<const Real>);

DRFUSER_INSTANTIATE(float)
DRFUSER_INSTANTIATE(double)

}  // namespace drfuser
