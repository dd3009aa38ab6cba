#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace profact {

using Shape = std::vector<int64_t>;

/// Allocates on 64-byte boundaries. Vectorized kernels split work by address
/// alignment, so a fixed alignment keeps floating-point results independent
/// of where the allocator happens to place a buffer.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, size_t) noexcept { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

/// Storage of tensor values and gradients.
using Buffer = std::vector<double, AlignedAllocator<double>>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    Buffer value;
    Buffer grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    Buffer& ensure_grad();
};

} // namespace detail

/// Dense row-major double tensor with reverse-mode autodiff.
///
/// Copies share storage: a Tensor is a handle to a graph node. Operations in
/// `profact::ops` build the graph when grad mode is enabled and at least one
/// input requires a gradient.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t dim(int axis) const;
    int rank() const { return static_cast<int>(shape().size()); }
    int64_t numel() const;

    std::span<const double> data() const;
    /// Writable view of the values. Only valid on leaves; mutating an
    /// intermediate would silently invalidate its recorded backward pass.
    std::span<double> mutable_data();
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    /// Empty span until a backward pass has reached this tensor.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Runs reverse-mode accumulation from this scalar tensor.
    void backward() const;

    /// Same values, cut out of the graph.
    Tensor detach() const;
    /// Deep copy of values into a fresh leaf.
    Tensor clone() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

/// Creates the output node of an op. `backward` is dropped when no input
/// needs a gradient or grad mode is off.
Tensor make_result(Shape shape, Buffer value, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward);
Tensor make_result(Shape shape, Buffer value, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward);

/// Gradient buffer of an input if it participates in backprop, else nullptr.
double* grad_target(const std::shared_ptr<Node>& node);

} // namespace detail

} // namespace profact
