#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major arrays.
//
// A BasicTensor is a cheap handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward closure; backward() walks
// the recorded graph once in reverse topological order and then releases it.
// The engine is instantiated for float (training) and double (gradient checks).

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fbsr::ad {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

template <typename T>
class BasicTensor {
public:
    using NodePtr = std::shared_ptr<Node<T>>;

    BasicTensor() = default;
    explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, T value, bool requires_grad = false);
    static BasicTensor from(Shape shape, std::vector<T> data, bool requires_grad = false);
    static BasicTensor scalar(T value, bool requires_grad = false);

    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    [[nodiscard]] const Shape& shape() const { return node_->shape; }
    [[nodiscard]] int dim(int axis) const;
    [[nodiscard]] int rank() const { return static_cast<int>(node_->shape.size()); }
    [[nodiscard]] std::size_t numel() const { return node_->value.size(); }

    [[nodiscard]] std::span<const T> data() const { return node_->value; }
    /// Direct write access; only meaningful for leaves (parameters, inputs).
    [[nodiscard]] std::span<T> mutable_data() { return node_->value; }
    [[nodiscard]] T item() const;

    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient buffer; zeros if nothing has been accumulated yet.
    [[nodiscard]] std::span<T> grad();
    void zero_grad() { node_->grad.clear(); }

    [[nodiscard]] const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Disables graph recording on this thread while alive (inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

/// Populates gradients of every requires_grad tensor reachable from `loss`
/// (accumulating into existing leaf gradients) and frees the graph.
template <typename T>
void backward(const BasicTensor<T>& loss);

// Element-wise binary ops with NumPy-style broadcasting.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& x, T c);
template <typename T> BasicTensor<T> mul_scalar(const BasicTensor<T>& x, T c);

// Element-wise unary ops.
template <typename T> BasicTensor<T> neg(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sqrt(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> square(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> tanh(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope);
/// Gradient passes only where lo <= x <= hi.
template <typename T> BasicTensor<T> clamp(const BasicTensor<T>& x, T lo, T hi);

/// Channel-wise parametric ReLU; x is [N, C, ...] and alpha is [C].
template <typename T> BasicTensor<T> prelu(const BasicTensor<T>& x, const BasicTensor<T>& alpha);

/// Same values, no gradient path.
template <typename T> BasicTensor<T> stop_gradient(const BasicTensor<T>& x);

// Reductions.
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x, const std::vector<int>& axes, bool keepdim);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x, const std::vector<int>& axes, bool keepdim);

// Shape manipulation.
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T> BasicTensor<T> slice(const BasicTensor<T>& x, int axis, int start, int length);
template <typename T> BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis);
template <typename T> BasicTensor<T> broadcast_to(const BasicTensor<T>& x, const Shape& shape);

/// [M, K] x [K, N] -> [M, N].
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Cross-correlation of x [N, C, H, W] with kernel [F, C, kh, kw] and zero padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, int stride, int padding);

/// Batch normalisation over (N, H, W) per channel using batch statistics.
/// x is [N, C, H, W], gamma and beta are [C]. Batch mean and biased variance
/// are written to the optional outputs.
template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          T eps, std::vector<T>* batch_mean = nullptr, std::vector<T>* batch_var = nullptr);

/// Index groups in compressed-row form: group g is indices[offsets[g] .. offsets[g+1]).
struct Segments {
    std::span<const int> offsets;
    std::span<const int> indices;
    [[nodiscard]] int count() const { return offsets.empty() ? 0 : static_cast<int>(offsets.size()) - 1; }
};

/// Per-sample group means: x is [N, P]; out[n, g] is the mean of x[n, i] over
/// group g of segments[n]; columns past a sample's group count are zero.
template <typename T>
BasicTensor<T> gather_mean(const BasicTensor<T>& x, std::span<const Segments> segments, int out_columns);

template <typename T> BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <typename T> BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <typename T> BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }
template <typename T> BasicTensor<T> operator/(const BasicTensor<T>& a, const BasicTensor<T>& b) { return div(a, b); }
template <typename T> BasicTensor<T> operator-(const BasicTensor<T>& x) { return neg(x); }
template <typename T> BasicTensor<T> operator+(const BasicTensor<T>& x, T c) { return add_scalar(x, c); }
template <typename T> BasicTensor<T> operator-(const BasicTensor<T>& x, T c) { return add_scalar(x, -c); }
template <typename T> BasicTensor<T> operator*(const BasicTensor<T>& x, T c) { return mul_scalar(x, c); }
template <typename T> BasicTensor<T> operator*(T c, const BasicTensor<T>& x) { return mul_scalar(x, c); }
template <typename T> BasicTensor<T> operator+(T c, const BasicTensor<T>& x) { return add_scalar(x, c); }
template <typename T> BasicTensor<T> operator-(T c, const BasicTensor<T>& x) { return add_scalar(neg(x), c); }

}  // namespace fbsr::ad
