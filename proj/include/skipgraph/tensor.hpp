#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "skipgraph/errors.hpp"

namespace skipgraph {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
concept Real = std::same_as<T, float> || std::same_as<T, double> || std::same_as<T, long double>;

/// Accumulator for reductions: double, or long double for the extended-precision
/// instantiation that serves as a finite-difference reference.
template <Real T>
using Accum = std::conditional_t<std::same_as<T, long double>, long double, double>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <Real T>
constexpr DType dtype_of() {
    return std::same_as<T, float> ? DType::f32 : DType::f64;
}

namespace detail {

template <Real T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into the parents captured by the closure.
    std::function<void(std::span<const T>)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

} // namespace detail

/// Handle to a dense row-major array that may take part in reverse-mode
/// differentiation. Copies share the underlying storage, the same way a
/// framework tensor does; use `detach()` for an independent copy.
template <Real T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(T v) { return Tensor(Shape{}, v); }

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size(std::size_t axis) const;
    std::size_t numel() const { return node_->value.size(); }

    std::span<T> data() { return node_->value; }
    std::span<const T> data() const { return node_->value; }
    T item() const;

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> grad_mut() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad();

    /// Runs reverse-mode accumulation from this scalar into every reachable
    /// leaf that requires grad. Leaf grads accumulate across calls.
    void backward() const;

    Tensor detach() const;
    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node<T>> node_;
};

// Grad mode -----------------------------------------------------------------

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Decision tape ---------------------------------------------------------------

/// Records the discrete choices ops make (ReLU masks, argmax indices, KNN
/// neighbor tables, channel selections) and replays them on later passes.
/// Under replay a piecewise-smooth network evaluates the smooth piece that was
/// active when recording, which is what finite-difference checks compare
/// against.
class DecisionTape {
public:
    enum class Mode { record, replay };

    explicit DecisionTape(Mode mode = Mode::record) : mode_(mode) {}

    Mode mode() const { return mode_; }
    void set_mode(Mode mode) {
        mode_ = mode;
        cursor_ = 0;
    }
    void rewind() { cursor_ = 0; }
    std::size_t size() const { return entries_.size(); }

    std::vector<std::int32_t> decide(const std::function<std::vector<std::int32_t>()>& compute);

private:
    Mode mode_;
    std::vector<std::vector<std::int32_t>> entries_;
    std::size_t cursor_ = 0;
};

/// Installs a tape for the current thread for the lifetime of the scope.
class TapeScope {
public:
    explicit TapeScope(DecisionTape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    DecisionTape* prev_;
};

DecisionTape* active_tape();

/// Routes a discrete choice through the active tape, if any.
std::vector<std::int32_t> decide(const std::function<std::vector<std::int32_t>()>& compute);

// Op plumbing -----------------------------------------------------------------

namespace detail {

template <Real T>
void check_finite(std::span<const T> values, const char* op);

/// Wraps an op result in a tensor and, when grad mode is on and any input
/// needs grad, links it into the graph with the given backward closure.
template <Real T>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> value,
                 std::initializer_list<const Tensor<T>*> inputs,
                 std::function<void(std::span<const T>)> backward_fn);

template <Real T>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> value,
                 const std::vector<Tensor<T>>& inputs,
                 std::function<void(std::span<const T>)> backward_fn);

/// Gradient sink for an input, or nullptr when it does not need grad.
template <Real T>
inline T* grad_sink(const Tensor<T>& t) {
    if (!t.defined() || !t.requires_grad()) return nullptr;
    t.node()->ensure_grad();
    return t.node()->grad.data();
}

} // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tensor<long double>;

} // namespace skipgraph
