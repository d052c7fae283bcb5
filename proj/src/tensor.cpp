#include "skipgraph/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace skipgraph {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
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

template <Real T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
    for (auto e : shape)
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
}

template <Real T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<detail::Node<T>>()) {
    for (auto e : shape)
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != data.size())
        throw DimensionError("shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " elements");
    node_->shape = std::move(shape);
    node_->value = std::move(data);
}

template <Real T>
std::size_t Tensor<T>::size(std::size_t axis) const {
    if (axis >= rank())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return node_->shape[axis];
}

template <Real T>
T Tensor<T>::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

template <Real T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    if (!node_->parents.empty() || node_->backward_fn)
        throw ValidationError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    return *this;
}

template <Real T>
void Tensor<T>::zero_grad() {
    if (node_) node_->grad.clear();
}

template <Real T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(node_->shape, node_->value);
}

template <Real T>
void Tensor<T>::backward() const {
    if (numel() != 1) throw DimensionError("backward() needs a scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<detail::Node<T>*> order;
    std::unordered_set<detail::Node<T>*> seen;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node<T>* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(n->grad);
    }
}

// Grad mode -----------------------------------------------------------------

namespace {
thread_local bool g_grad_enabled = true;
thread_local DecisionTape* g_tape = nullptr;
} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// Decision tape ---------------------------------------------------------------

std::vector<std::int32_t> DecisionTape::decide(const std::function<std::vector<std::int32_t>()>& compute) {
    if (mode_ == Mode::record) {
        entries_.push_back(compute());
        return entries_.back();
    }
    if (cursor_ >= entries_.size())
        throw GraphError("decision tape exhausted: replay diverged from the recorded pass");
    return entries_[cursor_++];
}

TapeScope::TapeScope(DecisionTape& tape) : prev_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = prev_; }

DecisionTape* active_tape() { return g_tape; }

std::vector<std::int32_t> decide(const std::function<std::vector<std::int32_t>()>& compute) {
    if (g_tape) return g_tape->decide(compute);
    return compute();
}

// Op plumbing -----------------------------------------------------------------

namespace detail {

template <Real T>
void check_finite(std::span<const T> values, const char* op) {
    for (T v : values)
        if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
}

template <Real T>
static Tensor<T> finish_impl(const char* op, Shape shape, std::vector<T> value,
                             std::vector<std::shared_ptr<Node<T>>> parents,
                             std::function<void(std::span<const T>)> backward_fn) {
    check_finite<T>(value, op);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    if (grad_enabled())
        for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(node));
}

template <Real T>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> value,
                 std::initializer_list<const Tensor<T>*> inputs,
                 std::function<void(std::span<const T>)> backward_fn) {
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (const Tensor<T>* t : inputs)
        if (t && t->defined()) parents.push_back(t->node());
    return finish_impl<T>(op, std::move(shape), std::move(value), std::move(parents), std::move(backward_fn));
}

template <Real T>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                 std::function<void(std::span<const T>)> backward_fn) {
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (const Tensor<T>& t : inputs)
        if (t.defined()) parents.push_back(t.node());
    return finish_impl<T>(op, std::move(shape), std::move(value), std::move(parents), std::move(backward_fn));
}

template void check_finite<float>(std::span<const float>, const char*);
template void check_finite<double>(std::span<const double>, const char*);
template void check_finite<long double>(std::span<const long double>, const char*);
template Tensor<long double> finish<long double>(const char*, Shape, std::vector<long double>,
                                                 std::initializer_list<const Tensor<long double>*>,
                                                 std::function<void(std::span<const long double>)>);
template Tensor<long double> finish<long double>(const char*, Shape, std::vector<long double>,
                                                 const std::vector<Tensor<long double>>&,
                                                 std::function<void(std::span<const long double>)>);
template Tensor<float> finish<float>(const char*, Shape, std::vector<float>,
                                     std::initializer_list<const Tensor<float>*>,
                                     std::function<void(std::span<const float>)>);
template Tensor<double> finish<double>(const char*, Shape, std::vector<double>,
                                       std::initializer_list<const Tensor<double>*>,
                                       std::function<void(std::span<const double>)>);
template Tensor<float> finish<float>(const char*, Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                                     std::function<void(std::span<const float>)>);
template Tensor<double> finish<double>(const char*, Shape, std::vector<double>, const std::vector<Tensor<double>>&,
                                       std::function<void(std::span<const double>)>);

} // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<long double>;

} // namespace skipgraph
