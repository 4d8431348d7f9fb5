#include "fbsr/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "fbsr/error.hpp"

namespace fbsr::ad {

namespace {

thread_local bool g_grad_mode = true;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> value, std::vector<NodePtr<T>> parents,
                           std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_mode) {
        const bool any = std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
        if (any) {
            node->requires_grad = true;
            node->parents = std::move(parents);
            node->backward = std::move(backward_fn);
        }
    }
    return BasicTensor<T>(std::move(node));
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` laid against `out`, zero where `in` is broadcast.
std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::size_t> strides(r, 0);
    std::size_t stride = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t i = in.size() - 1 - k;
        const std::size_t o = r - 1 - k;
        strides[o] = in[i] == 1 ? 0 : stride;
        stride *= static_cast<std::size_t>(in[i]);
    }
    return strides;
}

// Visits every element of `shape` with the linear index and two strided offsets.
template <typename F>
void for_each_strided(const Shape& shape, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                      F&& f) {
    const std::size_t r = shape.size();
    if (r == 0) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t total = shape_numel(shape);
    if (total == 0) return;
    const std::size_t inner = static_cast<std::size_t>(shape[r - 1]);
    const std::size_t ia_step = sa[r - 1];
    const std::size_t ib_step = sb[r - 1];
    std::vector<int> counter(r, 0);
    std::size_t base_a = 0;
    std::size_t base_b = 0;
    for (std::size_t i = 0; i < total; i += inner) {
        std::size_t oa = base_a;
        std::size_t ob = base_b;
        for (std::size_t k = 0; k < inner; ++k) {
            f(i + k, oa, ob);
            oa += ia_step;
            ob += ib_step;
        }
        for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
            if (++counter[d] < shape[d]) {
                base_a += sa[d];
                base_b += sb[d];
                break;
            }
            base_a -= sa[d] * static_cast<std::size_t>(shape[d] - 1);
            base_b -= sb[d] * static_cast<std::size_t>(shape[d] - 1);
            counter[d] = 0;
        }
    }
}

template <typename T, typename Fwd, typename Bwd>
BasicTensor<T> binary_op(const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd, Bwd bwd) {
    // bwd(x, y, out, g, &ga, &gb) adds the partials for one element.
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const auto sa = aligned_strides(a.shape(), out_shape);
    const auto sb = aligned_strides(b.shape(), out_shape);
    std::vector<T> value(shape_numel(out_shape));
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < value.size(); ++i) value[i] = fwd(av[i], bv[i]);
    } else {
        for_each_strided(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            value[i] = fwd(av[ia], bv[ib]);
        });
    }
    return make_result<T>(out_shape, std::move(value), {a.node(), b.node()},
                          [sa, sb, bwd](Node<T>& self) {
                              auto& pa = *self.parents[0];
                              auto& pb = *self.parents[1];
                              T* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
                              T* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
                              const auto& x = pa.value;
                              const auto& y = pb.value;
                              for_each_strided(self.shape, sa, sb,
                                               [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                                   T da = 0, db = 0;
                                                   bwd(x[ia], y[ib], self.value[i], self.grad[i], da, db);
                                                   if (ga) ga[ia] += da;
                                                   if (gb) gb[ib] += db;
                                               });
                          });
}

// dfdx(x, y) is the local derivative given input x and output y.
template <typename T, typename Fwd, typename Deriv>
BasicTensor<T> unary_op(const BasicTensor<T>& x, Fwd fwd, Deriv dfdx) {
    const auto& xv = x.node()->value;
    std::vector<T> value(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) value[i] = fwd(xv[i]);
    return make_result<T>(x.shape(), std::move(value), {x.node()}, [dfdx](Node<T>& self) {
        auto& p = *self.parents[0];
        auto& gp = p.grad_buffer();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
    });
}

int normalize_axis(int axis, int rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
    return axis;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }
bool grad_mode_enabled() { return g_grad_mode; }

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_string(shape));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

template <typename T>
int BasicTensor<T>::dim(int axis) const {
    return node_->shape[normalize_axis(axis, rank())];
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

template <typename T>
std::span<T> BasicTensor<T>::grad() {
    return node_->grad_buffer();
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
    if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS over the nodes that carry gradients.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    auto& root_grad = loss.node()->grad_buffer();
    root_grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
    for (Node<T>* node : order) {
        if (node->backward) {
            node->backward = nullptr;
            node->parents.clear();
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary_op(a, b, [](T x, T y) { return x + y; }, [](T, T, T, T g, T& da, T& db) {
        da = g;
        db = g;
    });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary_op(a, b, [](T x, T y) { return x - y; }, [](T, T, T, T g, T& da, T& db) {
        da = g;
        db = -g;
    });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary_op(a, b, [](T x, T y) { return x * y; }, [](T x, T y, T, T g, T& da, T& db) {
        da = g * y;
        db = g * x;
    });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary_op(a, b, [](T x, T y) { return x / y; }, [](T, T y, T out, T g, T& da, T& db) {
        da = g / y;
        db = -g * out / y;
    });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T c) {
    return unary_op(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& x, T c) {
    return unary_op(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
BasicTensor<T> neg(const BasicTensor<T>& x) {
    return unary_op(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
    return unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
    return unary_op(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
BasicTensor<T> sqrt(const BasicTensor<T>& x) {
    return unary_op(x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x) {
    return unary_op(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
    return unary_op(
        x,
        [](T v) {
            if (v >= 0) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
    return unary_op(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope) {
    return unary_op(x, [slope](T v) { return v > 0 ? v : slope * v; },
                    [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& x, T lo, T hi) {
    return unary_op(x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
                    [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> prelu(const BasicTensor<T>& x, const BasicTensor<T>& alpha) {
    if (x.rank() < 2 || alpha.numel() != static_cast<std::size_t>(x.dim(1))) {
        throw ShapeError("prelu: alpha " + shape_string(alpha.shape()) + " does not match channels of " +
                         shape_string(x.shape()));
    }
    const int n = x.dim(0);
    const int c = x.dim(1);
    const std::size_t inner = x.numel() / (static_cast<std::size_t>(n) * c);
    const auto& xv = x.node()->value;
    const auto& av = alpha.node()->value;
    std::vector<T> value(xv.size());
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * inner;
            for (std::size_t k = 0; k < inner; ++k) {
                const T v = xv[base + k];
                value[base + k] = v > 0 ? v : av[ch] * v;
            }
        }
    }
    return make_result<T>(x.shape(), std::move(value), {x.node(), alpha.node()}, [n, c, inner](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pa = *self.parents[1];
        T* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
        T* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
        for (int s = 0; s < n; ++s) {
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t base = (static_cast<std::size_t>(s) * c + ch) * inner;
                double acc = 0.0;
                for (std::size_t k = 0; k < inner; ++k) {
                    const T v = px.value[base + k];
                    const T g = self.grad[base + k];
                    if (v > 0) {
                        if (gx) gx[base + k] += g;
                    } else {
                        if (gx) gx[base + k] += g * pa.value[ch];
                        acc += static_cast<double>(g) * v;
                    }
                }
                if (ga) ga[ch] += static_cast<T>(acc);
            }
        }
    });
}

template <typename T>
BasicTensor<T> stop_gradient(const BasicTensor<T>& x) {
    return BasicTensor<T>::from(x.shape(), x.node()->value, false);
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    double acc = 0.0;
    for (T v : x.node()->value) acc += v;
    return make_result<T>({}, {static_cast<T>(acc)}, {x.node()}, [](Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        const T g = self.grad[0];
        for (auto& v : gp) v += g;
    });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
    if (x.numel() == 0) throw ShapeError("mean of empty tensor");
    return mul_scalar(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, const std::vector<int>& axes, bool keepdim) {
    const Shape& in = x.shape();
    const int r = x.rank();
    Shape kept = in;
    std::vector<bool> reduced(r, false);
    for (int a : axes) {
        const int ax = normalize_axis(a, r);
        reduced[ax] = true;
        kept[ax] = 1;
    }
    const auto so = aligned_strides(kept, in);
    const std::vector<std::size_t> zero(r, 0);
    std::vector<double> acc(shape_numel(kept), 0.0);
    const auto& xv = x.node()->value;
    for_each_strided(in, so, zero, [&](std::size_t i, std::size_t io, std::size_t) { acc[io] += xv[i]; });
    std::vector<T> value(acc.begin(), acc.end());
    Shape out_shape;
    if (keepdim) {
        out_shape = kept;
    } else {
        for (int d = 0; d < r; ++d) {
            if (!reduced[d]) out_shape.push_back(in[d]);
        }
    }
    return make_result<T>(out_shape, std::move(value), {x.node()}, [in, so, zero](Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for_each_strided(in, so, zero, [&](std::size_t i, std::size_t io, std::size_t) { gp[i] += self.grad[io]; });
    });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, const std::vector<int>& axes, bool keepdim) {
    std::size_t count = 1;
    for (int a : axes) count *= static_cast<std::size_t>(x.dim(a));
    if (count == 0) throw ShapeError("mean over empty axes");
    return mul_scalar(sum(x, axes, keepdim), static_cast<T>(1.0 / static_cast<double>(count)));
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
    int infer = -1;
    std::size_t known = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (infer >= 0) throw ShapeError("reshape: more than one inferred dimension");
            infer = static_cast<int>(i);
        } else {
            known *= static_cast<std::size_t>(shape[i]);
        }
    }
    if (infer >= 0 && known > 0) shape[infer] = static_cast<int>(x.numel() / known);
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
    }
    return make_result<T>(std::move(shape), x.node()->value, {x.node()}, [](Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
    });
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, int axis, int start, int length) {
    axis = normalize_axis(axis, x.rank());
    const Shape& in = x.shape();
    if (start < 0 || length < 0 || start + length > in[axis]) throw ShapeError("slice out of range");
    std::size_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= in[d];
    std::size_t inner = 1;
    for (int d = axis + 1; d < x.rank(); ++d) inner *= in[d];
    Shape out_shape = in;
    out_shape[axis] = length;
    const std::size_t src_block = in[axis] * inner;
    const std::size_t dst_block = length * inner;
    const std::size_t offset = start * inner;
    std::vector<T> value(outer * dst_block);
    const auto& xv = x.node()->value;
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(xv.begin() + o * src_block + offset, dst_block, value.begin() + o * dst_block);
    }
    return make_result<T>(out_shape, std::move(value), {x.node()},
                          [outer, src_block, dst_block, offset](Node<T>& self) {
                              auto& gp = self.parents[0]->grad_buffer();
                              for (std::size_t o = 0; o < outer; ++o) {
                                  for (std::size_t k = 0; k < dst_block; ++k) {
                                      gp[o * src_block + offset + k] += self.grad[o * dst_block + k];
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    axis = normalize_axis(axis, parts[0].rank());
    Shape out_shape = parts[0].shape();
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (static_cast<int>(s.size()) != static_cast<int>(out_shape.size())) throw ShapeError("concat rank mismatch");
        out_shape[axis] += s[axis];
        s[axis] = 0;
        Shape ref = parts[0].shape();
        ref[axis] = 0;
        if (s != ref) throw ShapeError("concat shape mismatch");
    }
    std::size_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[d];
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
    const std::size_t out_block = out_shape[axis] * inner;
    std::vector<std::size_t> blocks;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    std::vector<T> value(outer * out_block);
    std::vector<NodePtr<T>> parents;
    for (const auto& p : parts) {
        const std::size_t block = p.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(p.node()->value.begin() + o * block, block, value.begin() + o * out_block + off);
        }
        blocks.push_back(block);
        offsets.push_back(off);
        off += block;
        parents.push_back(p.node());
    }
    return make_result<T>(out_shape, std::move(value), std::move(parents),
                          [outer, out_block, blocks, offsets](Node<T>& self) {
                              for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                  auto& p = *self.parents[k];
                                  if (!p.requires_grad) continue;
                                  auto& gp = p.grad_buffer();
                                  for (std::size_t o = 0; o < outer; ++o) {
                                      for (std::size_t j = 0; j < blocks[k]; ++j) {
                                          gp[o * blocks[k] + j] += self.grad[o * out_block + offsets[k] + j];
                                      }
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> broadcast_to(const BasicTensor<T>& x, const Shape& shape) {
    if (broadcast_shape(x.shape(), shape) != shape) {
        throw ShapeError("cannot broadcast " + shape_string(x.shape()) + " to " + shape_string(shape));
    }
    const auto sx = aligned_strides(x.shape(), shape);
    const std::vector<std::size_t> zero(shape.size(), 0);
    std::vector<T> value(shape_numel(shape));
    const auto& xv = x.node()->value;
    for_each_strided(shape, sx, zero, [&](std::size_t i, std::size_t ix, std::size_t) { value[i] = xv[ix]; });
    return make_result<T>(shape, std::move(value), {x.node()}, [sx, zero](Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        for_each_strided(self.shape, sx, zero, [&](std::size_t i, std::size_t ix, std::size_t) { gp[ix] += self.grad[i]; });
    });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    const int m = a.dim(0);
    const int k = a.dim(1);
    const int n = b.dim(1);
    std::vector<T> value(static_cast<std::size_t>(m) * n);
    using Map = Eigen::Map<RowMatrix<T>>;
    using CMap = Eigen::Map<const RowMatrix<T>>;
    Map(value.data(), m, n).noalias() = CMap(a.node()->value.data(), m, k) * CMap(b.node()->value.data(), k, n);
    return make_result<T>({m, n}, std::move(value), {a.node(), b.node()}, [m, k, n](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        CMap g(self.grad.data(), m, n);
        if (pa.requires_grad) {
            Map(pa.grad_buffer().data(), m, k).noalias() += g * CMap(pb.value.data(), k, n).transpose();
        }
        if (pb.requires_grad) {
            Map(pb.grad_buffer().data(), k, n).noalias() += CMap(pa.value.data(), m, k).transpose() * g;
        }
    });
}

namespace {

struct ConvGeometry {
    int n, c, h, w, f, kh, kw, stride, pad, oh, ow;
    [[nodiscard]] int patch() const { return c * kh * kw; }
    [[nodiscard]] int out_pixels() const { return oh * ow; }
};

// Output columns [lo, hi) whose input column ox*stride - pad + j lies inside the row.
inline void valid_columns(const ConvGeometry& g, int j, int& lo, int& hi) {
    const int shift = j - g.pad;
    lo = shift >= 0 ? 0 : (-shift + g.stride - 1) / g.stride;
    hi = g.w - 1 - shift < 0 ? 0 : std::min(g.ow, (g.w - 1 - shift) / g.stride + 1);
    if (hi < lo) hi = lo;
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const int op = g.out_pixels();
    for (int ch = 0; ch < g.c; ++ch) {
        const T* plane = x + static_cast<std::size_t>(ch) * g.h * g.w;
        for (int i = 0; i < g.kh; ++i) {
            for (int j = 0; j < g.kw; ++j) {
                T* row = cols + static_cast<std::size_t>((ch * g.kh + i) * g.kw + j) * op;
                int lo = 0;
                int hi = 0;
                valid_columns(g, j, lo, hi);
                const int shift = j - g.pad;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + i;
                    T* dst = row + static_cast<std::size_t>(oy) * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill_n(dst, g.ow, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    std::fill_n(dst, lo, T(0));
                    if (g.stride == 1) {
                        std::copy_n(src + lo + shift, hi - lo, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride + shift];
                    }
                    std::fill(dst + hi, dst + g.ow, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
    const int op = g.out_pixels();
    for (int ch = 0; ch < g.c; ++ch) {
        T* plane = x + static_cast<std::size_t>(ch) * g.h * g.w;
        for (int i = 0; i < g.kh; ++i) {
            for (int j = 0; j < g.kw; ++j) {
                const T* row = cols + static_cast<std::size_t>((ch * g.kh + i) * g.kw + j) * op;
                int lo = 0;
                int hi = 0;
                valid_columns(g, j, lo, hi);
                const int shift = j - g.pad;
                for (int oy = 0; oy < g.oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + i;
                    if (iy < 0 || iy >= g.h) continue;
                    const T* src = row + static_cast<std::size_t>(oy) * g.ow;
                    T* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride + shift] += src[ox];
                }
            }
        }
    }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, int stride, int padding) {
    if (x.rank() != 4 || kernel.rank() != 4 || x.dim(1) != kernel.dim(1)) {
        throw ShapeError("conv2d input " + shape_string(x.shape()) + " with kernel " + shape_string(kernel.shape()));
    }
    if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                   stride, padding, 0, 0};
    g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
    g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
    if (g.oh <= 0 || g.ow <= 0) throw ShapeError("conv2d: kernel larger than padded input");

    using Map = Eigen::Map<RowMatrix<T>>;
    using CMap = Eigen::Map<const RowMatrix<T>>;
    const std::size_t in_sample = static_cast<std::size_t>(g.c) * g.h * g.w;
    const std::size_t out_sample = static_cast<std::size_t>(g.f) * g.out_pixels();
    std::vector<T> value(out_sample * g.n);
    std::vector<T> cols(static_cast<std::size_t>(g.patch()) * g.out_pixels());
    CMap wmat(kernel.node()->value.data(), g.f, g.patch());
    for (int s = 0; s < g.n; ++s) {
        im2col(x.node()->value.data() + s * in_sample, g, cols.data());
        Map(value.data() + s * out_sample, g.f, g.out_pixels()).noalias() =
            wmat * CMap(cols.data(), g.patch(), g.out_pixels());
    }
    return make_result<T>({g.n, g.f, g.oh, g.ow}, std::move(value), {x.node(), kernel.node()},
                          [g, in_sample, out_sample](Node<T>& self) {
                              auto& px = *self.parents[0];
                              auto& pk = *self.parents[1];
                              std::vector<T> cols(static_cast<std::size_t>(g.patch()) * g.out_pixels());
                              CMap wmat(pk.value.data(), g.f, g.patch());
                              for (int s = 0; s < g.n; ++s) {
                                  CMap gout(self.grad.data() + s * out_sample, g.f, g.out_pixels());
                                  if (pk.requires_grad) {
                                      im2col(px.value.data() + s * in_sample, g, cols.data());
                                      Map(pk.grad_buffer().data(), g.f, g.patch()).noalias() +=
                                          gout * CMap(cols.data(), g.patch(), g.out_pixels()).transpose();
                                  }
                                  if (px.requires_grad) {
                                      Map(cols.data(), g.patch(), g.out_pixels()).noalias() = wmat.transpose() * gout;
                                      col2im(cols.data(), g, px.grad_buffer().data() + s * in_sample);
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps,
                          std::vector<T>* batch_mean, std::vector<T>* batch_var) {
    if (x.rank() != 4) throw ShapeError("batch_norm expects [N,C,H,W], got " + shape_string(x.shape()));
    const int n = x.dim(0);
    const int c = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c)) {
        throw ShapeError("batch_norm: affine parameters do not match channel count");
    }
    const double count = static_cast<double>(n) * hw;
    const auto& xv = x.node()->value;
    std::vector<T> mu(c), inv_std(c), var(c);
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int b = 0; b < n; ++b) {
            const T* p = xv.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
            for (std::size_t k = 0; k < hw; ++k) s += p[k];
        }
        const double m = s / count;
        double ss = 0.0;
        for (int b = 0; b < n; ++b) {
            const T* p = xv.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
                const double d = p[k] - m;
                ss += d * d;
            }
        }
        mu[ch] = static_cast<T>(m);
        var[ch] = static_cast<T>(ss / count);
        inv_std[ch] = static_cast<T>(1.0 / std::sqrt(ss / count + eps));
    }
    if (batch_mean) *batch_mean = mu;
    if (batch_var) *batch_var = var;

    std::vector<T> xhat(xv.size());
    std::vector<T> value(xv.size());
    const auto& gv = gamma.node()->value;
    const auto& bv = beta.node()->value;
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
                const T h = (xv[base + k] - mu[ch]) * inv_std[ch];
                xhat[base + k] = h;
                value[base + k] = gv[ch] * h + bv[ch];
            }
        }
    }
    return make_result<T>(x.shape(), std::move(value), {x.node(), gamma.node(), beta.node()},
                          [n, c, hw, count, xhat = std::move(xhat), inv_std](Node<T>& self) {
                              auto& px = *self.parents[0];
                              auto& pg = *self.parents[1];
                              auto& pb = *self.parents[2];
                              for (int ch = 0; ch < c; ++ch) {
                                  double sum_g = 0.0;
                                  double sum_gx = 0.0;
                                  for (int b = 0; b < n; ++b) {
                                      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
                                      for (std::size_t k = 0; k < hw; ++k) {
                                          sum_g += self.grad[base + k];
                                          sum_gx += static_cast<double>(self.grad[base + k]) * xhat[base + k];
                                      }
                                  }
                                  if (pb.requires_grad) pb.grad_buffer()[ch] += static_cast<T>(sum_g);
                                  if (pg.requires_grad) pg.grad_buffer()[ch] += static_cast<T>(sum_gx);
                                  if (!px.requires_grad) continue;
                                  auto& gx = px.grad_buffer();
                                  const double scale = static_cast<double>(pg.value[ch]) * inv_std[ch] / count;
                                  for (int b = 0; b < n; ++b) {
                                      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
                                      for (std::size_t k = 0; k < hw; ++k) {
                                          gx[base + k] += static_cast<T>(
                                              scale * (count * self.grad[base + k] - sum_g - xhat[base + k] * sum_gx));
                                      }
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> gather_mean(const BasicTensor<T>& x, std::span<const Segments> segments, int out_columns) {
    if (x.rank() != 2 || static_cast<std::size_t>(x.dim(0)) != segments.size()) {
        throw ShapeError("gather_mean: expected [N,P] input with one segment table per sample");
    }
    const int n = x.dim(0);
    const std::size_t p = static_cast<std::size_t>(x.dim(1));
    std::vector<std::vector<int>> offsets(n);
    std::vector<std::vector<int>> indices(n);
    std::vector<T> value(static_cast<std::size_t>(n) * out_columns, T(0));
    const auto& xv = x.node()->value;
    for (int s = 0; s < n; ++s) {
        const auto& seg = segments[s];
        if (seg.count() > out_columns) throw ShapeError("gather_mean: more groups than output columns");
        offsets[s].assign(seg.offsets.begin(), seg.offsets.end());
        indices[s].assign(seg.indices.begin(), seg.indices.end());
        for (int gi = 0; gi < seg.count(); ++gi) {
            const int b = seg.offsets[gi];
            const int e = seg.offsets[gi + 1];
            if (e <= b) throw ShapeError("gather_mean: empty group");
            double acc = 0.0;
            for (int k = b; k < e; ++k) {
                const int idx = seg.indices[k];
                if (idx < 0 || static_cast<std::size_t>(idx) >= p) throw ShapeError("gather_mean: index out of range");
                acc += xv[s * p + idx];
            }
            value[static_cast<std::size_t>(s) * out_columns + gi] = static_cast<T>(acc / (e - b));
        }
    }
    return make_result<T>({n, out_columns}, std::move(value), {x.node()},
                          [n, p, out_columns, offsets = std::move(offsets), indices = std::move(indices)](Node<T>& self) {
                              auto& gx = self.parents[0]->grad_buffer();
                              for (int s = 0; s < n; ++s) {
                                  const int groups = static_cast<int>(offsets[s].size()) - 1;
                                  for (int gi = 0; gi < groups; ++gi) {
                                      const int b = offsets[s][gi];
                                      const int e = offsets[s][gi + 1];
                                      const T g = self.grad[static_cast<std::size_t>(s) * out_columns + gi] /
                                                  static_cast<T>(e - b);
                                      for (int k = b; k < e; ++k) gx[s * p + indices[s][k]] += g;
                                  }
                              }
                          });
}

#define FBSR_INSTANTIATE(T)                                                                                        \
    template class BasicTensor<T>;                                                                                 \
    template void backward(const BasicTensor<T>&);                                                                 \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
    template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
    template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                                  \
    template BasicTensor<T> mul_scalar(const BasicTensor<T>&, T);                                                  \
    template BasicTensor<T> neg(const BasicTensor<T>&);                                                            \
    template BasicTensor<T> exp(const BasicTensor<T>&);                                                            \
    template BasicTensor<T> log(const BasicTensor<T>&);                                                            \
    template BasicTensor<T> sqrt(const BasicTensor<T>&);                                                           \
    template BasicTensor<T> square(const BasicTensor<T>&);                                                         \
    template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                        \
    template BasicTensor<T> tanh(const BasicTensor<T>&);                                                           \
    template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                                  \
    template BasicTensor<T> clamp(const BasicTensor<T>&, T, T);                                                    \
    template BasicTensor<T> prelu(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
    template BasicTensor<T> stop_gradient(const BasicTensor<T>&);                                                  \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                                            \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                                           \
    template BasicTensor<T> sum(const BasicTensor<T>&, const std::vector<int>&, bool);                             \
    template BasicTensor<T> mean(const BasicTensor<T>&, const std::vector<int>&, bool);                            \
    template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                                 \
    template BasicTensor<T> slice(const BasicTensor<T>&, int, int, int);                                           \
    template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, int);                                       \
    template BasicTensor<T> broadcast_to(const BasicTensor<T>&, const Shape&);                                     \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, int, int);                        \
    template BasicTensor<T> batch_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T,     \
                                       std::vector<T>*, std::vector<T>*);                                          \
    template BasicTensor<T> gather_mean(const BasicTensor<T>&, std::span<const Segments>, int);

FBSR_INSTANTIATE(float)
FBSR_INSTANTIATE(double)

#undef FBSR_INSTANTIATE

}  // namespace fbsr::ad
