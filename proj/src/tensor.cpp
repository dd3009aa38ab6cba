#include "profact/tensor.hpp"

#include "profact/error.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace profact {

namespace {
thread_local bool g_grad_enabled = true;
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) {
            throw ShapeMismatch("negative dimension in shape " + shape_str(shape));
        }
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Buffer& detail::Node::ensure_grad() {
    if (grad.size() != value.size()) {
        grad.assign(value.size(), 0.0);
    }
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->value.assign(static_cast<size_t>(shape_numel(shape)), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeMismatch("data size " + std::to_string(data.size()) + " does not match shape " +
                            shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value.assign(data.begin(), data.end());
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

int64_t Tensor::dim(int axis) const {
    const auto& s = node_->shape;
    if (axis < 0) {
        axis += static_cast<int>(s.size());
    }
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw ShapeMismatch("axis out of range for shape " + shape_str(s));
    }
    return s[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(node_->value.size()); }

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
    if (node_->value.size() != 1) {
        throw ShapeMismatch("item() on tensor with shape " + shape_str(node_->shape));
    }
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
    if (node_->value.size() != 1) {
        throw ShapeMismatch("backward() requires a scalar, got " + shape_str(node_->shape));
    }
    if (!node_->requires_grad) {
        return;
    }
    // Iterative post-order DFS gives a topological order of the graph. The
    // order owns its nodes so releasing inputs below cannot free pending ones.
    std::vector<std::shared_ptr<detail::Node>> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<std::shared_ptr<detail::Node>, size_t>> stack{{node_, 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            const std::shared_ptr<detail::Node>& child = node->inputs[next++];
            if (child->requires_grad && visited.insert(child.get()).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(std::move(node));
            stack.pop_back();
        }
    }
    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = it->get();
        if (node->backward) {
            node->ensure_grad();
            node->backward(*node);
            // Interior graph is single-use; release it so buffers free early.
            node->backward = nullptr;
            node->inputs.clear();
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->value = node_->value;
    return Tensor(std::move(node));
}

Tensor Tensor::clone() const { return detach(); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

namespace {

template <class Range>
Tensor make_result_impl(Shape shape, Buffer value, const Range& inputs,
                        std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const Tensor& t : inputs) {
            if (t.defined() && t.requires_grad()) {
                needs = true;
                break;
            }
        }
    }
    if (needs) {
        node->requires_grad = true;
        for (const Tensor& t : inputs) {
            if (t.defined()) {
                node->inputs.push_back(t.node());
            }
        }
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

} // namespace

Tensor make_result(Shape shape, Buffer value, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward) {
    return make_result_impl(std::move(shape), std::move(value), inputs, std::move(backward));
}

Tensor make_result(Shape shape, Buffer value, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward) {
    return make_result_impl(std::move(shape), std::move(value), inputs, std::move(backward));
}

double* grad_target(const std::shared_ptr<Node>& node) {
    if (!node || !node->requires_grad) {
        return nullptr;
    }
    return node->ensure_grad().data();
}

} // namespace detail

} // namespace profact
