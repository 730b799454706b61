#pragma once

// Dense N-d tensor with reverse-mode autodiff over a dynamically built graph.
// Values are immutable after creation; only grad buffers mutate. The graph is
// freed during backward(), so each graph supports exactly one backward pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace fseg {

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

[[noreturn]] inline void op_error(const std::string& op, const std::string& msg) {
    throw TensorError(op + ": " + msg);
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    op_error(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Whether newly created ops record lineage. Disabled inside NoGradGuard scopes
// (evaluation / prediction paths).
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev; }
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // lazily allocated, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
class Tensor {
public:
    using Impl = TensorImpl<T>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (numel(shape) != data.size())
            op_error("Tensor", "shape " + shape_str(shape) + " does not match " +
                                   std::to_string(data.size()) + " values");
        impl_ = std::make_shared<Impl>();
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<T> d(numel(shape), T(0));
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }
    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        std::vector<T> d(numel(shape), value);
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }
    static Tensor scalar(T value, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    size_t size() const { return impl_->data.size(); }
    size_t dim(size_t i) const { return impl_->shape[i]; }
    size_t rank() const { return impl_->shape.size(); }
    const std::vector<T>& data() const { return impl_->data; }
    bool requires_grad() const { return impl_ && impl_->requires_grad; }

    // Leaf-only mutable access (initialization, optimizer updates, gradcheck
    // perturbation). Contract: never called on a tensor with lineage.
    std::vector<T>& raw_data() { return impl_->data; }

    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }
    const std::vector<T>& grad() const {
        if (!has_grad()) op_error("grad", "no gradient accumulated");
        return impl_->grad;
    }
    void zero_grad() {
        if (impl_) impl_->grad.assign(impl_->data.size(), T(0));
    }

    Tensor detach() const {
        Tensor out(impl_->shape, impl_->data, false);
        return out;
    }

    std::shared_ptr<Impl> impl() const { return impl_; }

    // Reverse-mode sweep from a scalar root. Visits each node exactly once in
    // reverse topological order, then frees the graph.
    void backward() const {
        if (!impl_) op_error("backward", "undefined tensor");
        if (size() != 1) op_error("backward", "root must be scalar, got " + shape_str(shape()));
        if (!impl_->requires_grad) op_error("backward", "root does not require grad");

        // Shared ownership pins every node for the whole sweep; clearing a
        // node's parents early would free intermediates still awaiting their
        // backward call.
        std::vector<std::shared_ptr<Impl>> order;
        std::unordered_set<Impl*> seen;
        // Iterative DFS postorder.
        std::vector<std::pair<std::shared_ptr<Impl>, size_t>> stack;
        stack.push_back({impl_, 0});
        seen.insert(impl_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                std::shared_ptr<Impl> p = node->parents[next++];
                if (seen.insert(p.get()).second) stack.push_back({std::move(p), 0});
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        impl_->ensure_grad();
        impl_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Impl* node = it->get();
            if (node->backward_fn) node->backward_fn(*node);
            node->backward_fn = nullptr;
            node->parents.clear();
        }
    }

private:
    std::shared_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Graph construction helpers

template <typename T>
inline bool track_grad(std::initializer_list<Tensor<T>> inputs) {
    if (!grad_mode_flag()) return false;
    for (const auto& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

template <typename T>
inline Tensor<T> make_node(Shape shape, std::vector<T> data, bool tracked,
                           std::vector<std::shared_ptr<TensorImpl<T>>> parents,
                           std::function<void(TensorImpl<T>&)> fn) {
    Tensor<T> out(std::move(shape), std::move(data), tracked);
    if (tracked) {
        out.impl()->parents = std::move(parents);
        out.impl()->backward_fn = std::move(fn);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Broadcasting (same rank; each dim equal or 1)

inline Shape broadcast_shape(const std::string& op, const Shape& a, const Shape& b) {
    if (a.size() != b.size()) shape_error(op, a, b);
    Shape out(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || a[i] == 1 || b[i] == 1)
            out[i] = std::max(a[i], b[i]);
        else
            shape_error(op, a, b);
    }
    return out;
}

inline std::vector<size_t> row_major_strides(const Shape& s) {
    std::vector<size_t> st(s.size());
    size_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// Strides for reading `shape` as if broadcast to `out`: size-1 dims get stride 0.
inline std::vector<size_t> broadcast_strides(const Shape& shape, const Shape& out) {
    auto st = row_major_strides(shape);
    for (size_t i = 0; i < shape.size(); ++i)
        if (shape[i] == 1 && out[i] != 1) st[i] = 0;
    return st;
}

// Iterates the flat index space of `out`, producing offsets into two
// broadcast operands.
template <class F>
inline void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& fn) {
    const size_t n = numel(out);
    const auto sa = broadcast_strides(a, out);
    const auto sb = broadcast_strides(b, out);
    std::vector<size_t> idx(out.size(), 0);
    size_t ia = 0, ib = 0;
    for (size_t i = 0; i < n; ++i) {
        fn(i, ia, ib);
        for (size_t d = out.size(); d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
            if (d == 0) return;
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

template <typename T, class Fwd, class BwdA, class BwdB>
inline Tensor<T> binary_op(const std::string& name, const Tensor<T>& a, const Tensor<T>& b,
                           Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
    Shape out_shape = broadcast_shape(name, a.shape(), b.shape());
    std::vector<T> out(numel(out_shape));
    auto pa = a.impl(), pb = b.impl();
    for_each_broadcast(out_shape, a.shape(), b.shape(),
                       [&](size_t i, size_t ia, size_t ib) { out[i] = fwd(pa->data[ia], pb->data[ib]); });
    bool tracked = track_grad<T>({a, b});
    Shape ash = a.shape(), bsh = b.shape();
    return make_node<T>(
        out_shape, std::move(out), tracked, {pa, pb},
        [pa, pb, ash, bsh, out_shape, bwd_a, bwd_b](TensorImpl<T>& self) {
            const bool ga = pa->requires_grad, gb = pb->requires_grad;
            if (ga) pa->ensure_grad();
            if (gb) pb->ensure_grad();
            for_each_broadcast(out_shape, ash, bsh, [&](size_t i, size_t ia, size_t ib) {
                T g = self.grad[i];
                if (ga) pa->grad[ia] += bwd_a(g, pa->data[ia], pb->data[ib]);
                if (gb) pb->grad[ib] += bwd_b(g, pa->data[ia], pb->data[ib]);
            });
        });
}

template <typename T>
inline Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return g; });
}

template <typename T>
inline Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return -g; });
}

template <typename T>
inline Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <typename T>
inline Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "div", a, b, [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
        [](T g, T x, T y) { return -g * x / (y * y); });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <typename T, class Fwd, class Bwd>
inline Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Bwd bwd) {
    std::vector<T> out(x.size());
    auto px = x.impl();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(px->data[i]);
    bool tracked = track_grad<T>({x});
    return make_node<T>(x.shape(), std::move(out), tracked, {px}, [px, bwd](TensorImpl<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            px->grad[i] += bwd(self.grad[i], px->data[i], self.data[i]);
    });
}

template <typename T>
inline Tensor<T> neg(const Tensor<T>& x) {
    return unary_op<T>(x, [](T v) { return -v; }, [](T g, T, T) { return -g; });
}

template <typename T>
inline Tensor<T> relu(const Tensor<T>& x) {
    return unary_op<T>(x, [](T v) { return v > T(0) ? v : T(0); },
                       [](T g, T v, T) { return v > T(0) ? g : T(0); });
}

template <typename T>
inline Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op<T>(
        x,
        [](T v) {
            return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                             : std::exp(v) / (T(1) + std::exp(v));
        },
        [](T g, T, T y) { return g * y * (T(1) - y); });
}

template <typename T>
inline Tensor<T> exp_t(const Tensor<T>& x) {
    return unary_op<T>(x, [](T v) { return std::exp(v); }, [](T g, T, T y) { return g * y; });
}

template <typename T>
inline Tensor<T> log_t(const Tensor<T>& x) {
    return unary_op<T>(x, [](T v) { return std::log(v); }, [](T g, T v, T) { return g / v; });
}

template <typename T>
inline Tensor<T> sqrt_t(const Tensor<T>& x) {
    return unary_op<T>(x, [](T v) { return std::sqrt(v); },
                       [](T g, T, T y) { return g / (T(2) * y); });
}

// softplus(x) = log(1 + e^x), evaluated in the overflow-safe form.
template <typename T>
inline Tensor<T> softplus(const Tensor<T>& x) {
    return unary_op<T>(
        x,
        [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](T g, T v, T) {
            T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                            : std::exp(v) / (T(1) + std::exp(v));
            return g * s;
        });
}

template <typename T>
inline Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return unary_op<T>(x, [c](T v) { return v + c; }, [](T g, T, T) { return g; });
}

template <typename T>
inline Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
    return unary_op<T>(x, [c](T v) { return v * c; }, [c](T g, T, T) { return g * c; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
inline Tensor<T> sum_all(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    auto px = x.impl();
    bool tracked = track_grad<T>({x});
    return make_node<T>(Shape{1}, std::vector<T>{acc}, tracked, {px}, [px](TensorImpl<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        T g = self.grad[0];
        for (auto& v : px->grad) v += g;
    });
}

// Sum over a set of axes, keeping them as size-1 dims.
template <typename T>
inline Tensor<T> sum_axes(const Tensor<T>& x, const std::vector<size_t>& axes) {
    Shape out_shape = x.shape();
    for (size_t a : axes) {
        if (a >= out_shape.size()) op_error("sum_axes", "axis out of range");
        out_shape[a] = 1;
    }
    std::vector<T> out(numel(out_shape), T(0));
    auto px = x.impl();
    Shape in_shape = x.shape();
    // out index from in index: dims reduced read offset 0
    const auto so = broadcast_strides(out_shape, in_shape);
    const auto n = x.size();
    {
        std::vector<size_t> idx(in_shape.size(), 0);
        size_t io = 0;
        for (size_t i = 0; i < n; ++i) {
            out[io] += px->data[i];
            for (size_t d = in_shape.size(); d-- > 0;) {
                ++idx[d];
                io += so[d];
                if (idx[d] < in_shape[d]) break;
                io -= so[d] * in_shape[d];
                idx[d] = 0;
            }
        }
    }
    bool tracked = track_grad<T>({x});
    return make_node<T>(out_shape, std::move(out), tracked, {px},
                        [px, in_shape, out_shape](TensorImpl<T>& self) {
                            if (!px->requires_grad) return;
                            px->ensure_grad();
                            const auto so = broadcast_strides(out_shape, in_shape);
                            std::vector<size_t> idx(in_shape.size(), 0);
                            size_t io = 0;
                            for (size_t i = 0; i < px->data.size(); ++i) {
                                px->grad[i] += self.grad[io];
                                for (size_t d = in_shape.size(); d-- > 0;) {
                                    ++idx[d];
                                    io += so[d];
                                    if (idx[d] < in_shape[d]) break;
                                    io -= so[d] * in_shape[d];
                                    idx[d] = 0;
                                }
                            }
                        });
}

template <typename T>
inline Tensor<T> mean_axes(const Tensor<T>& x, const std::vector<size_t>& axes) {
    size_t cnt = 1;
    for (size_t a : axes) cnt *= x.shape()[a];
    return mul_scalar(sum_axes(x, axes), T(1) / T(cnt));
}

// Max over one axis (kept as size 1). Gradient routes to the first argmax.
template <typename T>
inline Tensor<T> max_axis(const Tensor<T>& x, size_t axis) {
    if (axis >= x.rank()) op_error("max_axis", "axis out of range");
    Shape out_shape = x.shape();
    out_shape[axis] = 1;
    const size_t n_out = numel(out_shape);
    std::vector<T> out(n_out);
    auto arg = std::make_shared<std::vector<size_t>>(n_out);
    auto px = x.impl();
    const Shape in_shape = x.shape();
    const auto in_st = row_major_strides(in_shape);
    const size_t k = in_shape[axis];
    // Enumerate output positions; scan along `axis`.
    const auto out_st = row_major_strides(out_shape);
    for (size_t o = 0; o < n_out; ++o) {
        // Decode o into a full input base offset with axis index 0.
        size_t rem = o, base = 0;
        for (size_t d = 0; d < out_shape.size(); ++d) {
            size_t c = rem / out_st[d];
            rem %= out_st[d];
            base += c * in_st[d];
        }
        size_t best = base;
        T bv = px->data[base];
        for (size_t j = 1; j < k; ++j) {
            size_t ii = base + j * in_st[axis];
            if (px->data[ii] > bv) {
                bv = px->data[ii];
                best = ii;
            }
        }
        out[o] = bv;
        (*arg)[o] = best;
    }
    bool tracked = track_grad<T>({x});
    return make_node<T>(out_shape, std::move(out), tracked, {px}, [px, arg](TensorImpl<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t o = 0; o < self.grad.size(); ++o) px->grad[(*arg)[o]] += self.grad[o];
    });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
inline Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        op_error("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    auto px = x.impl();
    bool tracked = track_grad<T>({x});
    return make_node<T>(std::move(new_shape), px->data, tracked, {px}, [px](TensorImpl<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    });
}

template <typename T>
inline Tensor<T> permute(const Tensor<T>& x, const std::vector<size_t>& perm) {
    if (perm.size() != x.rank()) op_error("permute", "rank mismatch");
    Shape out_shape(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.shape()[perm[i]];
    const auto in_st = row_major_strides(x.shape());
    std::vector<size_t> gather_st(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) gather_st[i] = in_st[perm[i]];
    const size_t n = x.size();
    std::vector<T> out(n);
    auto src_index = std::make_shared<std::vector<size_t>>(n);
    auto px = x.impl();
    std::vector<size_t> idx(out_shape.size(), 0);
    size_t ii = 0;
    for (size_t i = 0; i < n; ++i) {
        out[i] = px->data[ii];
        (*src_index)[i] = ii;
        for (size_t d = out_shape.size(); d-- > 0;) {
            ++idx[d];
            ii += gather_st[d];
            if (idx[d] < out_shape[d]) break;
            ii -= gather_st[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    bool tracked = track_grad<T>({x});
    return make_node<T>(out_shape, std::move(out), tracked, {px},
                        [px, src_index](TensorImpl<T>& self) {
                            if (!px->requires_grad) return;
                            px->ensure_grad();
                            for (size_t i = 0; i < self.grad.size(); ++i)
                                px->grad[(*src_index)[i]] += self.grad[i];
                        });
}

template <typename T>
inline Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t axis) {
    if (parts.empty()) op_error("concat", "no inputs");
    Shape out_shape = parts[0].shape();
    if (axis >= out_shape.size()) op_error("concat", "axis out of range");
    size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != out_shape.size()) shape_error("concat", out_shape, p.shape());
        for (size_t d = 0; d < out_shape.size(); ++d)
            if (d != axis && p.shape()[d] != out_shape[d]) shape_error("concat", out_shape, p.shape());
        total += p.shape()[axis];
    }
    out_shape[axis] = total;

    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= out_shape[d];
    for (size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];

    std::vector<T> out(numel(out_shape));
    size_t off = 0;
    for (const auto& p : parts) {
        const size_t k = p.shape()[axis];
        const auto& pd = p.data();
        for (size_t o = 0; o < outer; ++o)
            std::copy(pd.begin() + o * k * inner, pd.begin() + (o + 1) * k * inner,
                      out.begin() + (o * total + off) * inner);
        off += k;
    }

    bool tracked = false;
    std::vector<std::shared_ptr<TensorImpl<T>>> parents;
    std::vector<size_t> sizes;
    for (const auto& p : parts) {
        parents.push_back(p.impl());
        sizes.push_back(p.shape()[axis]);
        if (grad_mode_flag() && p.requires_grad()) tracked = true;
    }
    return make_node<T>(out_shape, std::move(out), tracked, parents,
                        [parents, sizes, outer, inner, total](TensorImpl<T>& self) {
                            size_t off = 0;
                            for (size_t pi = 0; pi < parents.size(); ++pi) {
                                auto& p = parents[pi];
                                const size_t k = sizes[pi];
                                if (p->requires_grad) {
                                    p->ensure_grad();
                                    for (size_t o = 0; o < outer; ++o)
                                        for (size_t j = 0; j < k * inner; ++j)
                                            p->grad[o * k * inner + j] +=
                                                self.grad[(o * total + off) * inner + j];
                                }
                                off += k;
                            }
                        });
}

template <typename T>
inline std::vector<Tensor<T>> split(const Tensor<T>& x, size_t axis, size_t parts) {
    if (axis >= x.rank()) op_error("split", "axis out of range");
    const size_t k = x.shape()[axis];
    if (parts == 0 || k % parts != 0)
        op_error("split", std::to_string(parts) + " parts do not divide extent " + std::to_string(k));
    const size_t piece = k / parts;
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
    for (size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape()[d];

    auto px = x.impl();
    std::vector<Tensor<T>> out;
    for (size_t pi = 0; pi < parts; ++pi) {
        Shape sh = x.shape();
        sh[axis] = piece;
        std::vector<T> d(numel(sh));
        const size_t off = pi * piece;
        for (size_t o = 0; o < outer; ++o)
            std::copy(px->data.begin() + (o * k + off) * inner,
                      px->data.begin() + (o * k + off + piece) * inner,
                      d.begin() + o * piece * inner);
        bool tracked = track_grad<T>({x});
        out.push_back(make_node<T>(sh, std::move(d), tracked, {px},
                                   [px, off, piece, outer, inner, k](TensorImpl<T>& self) {
                                       if (!px->requires_grad) return;
                                       px->ensure_grad();
                                       for (size_t o = 0; o < outer; ++o)
                                           for (size_t j = 0; j < piece * inner; ++j)
                                               px->grad[(o * k + off) * inner + j] +=
                                                   self.grad[o * piece * inner + j];
                                   }));
    }
    return out;
}

template <typename T>
inline Tensor<T> slice_axis(const Tensor<T>& x, size_t axis, size_t start, size_t len) {
    if (axis >= x.rank() || start + len > x.shape()[axis])
        op_error("slice_axis", "range out of bounds on axis " + std::to_string(axis));
    const size_t k = x.shape()[axis];
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
    for (size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape()[d];
    Shape sh = x.shape();
    sh[axis] = len;
    auto px = x.impl();
    std::vector<T> d(numel(sh));
    for (size_t o = 0; o < outer; ++o)
        std::copy(px->data.begin() + (o * k + start) * inner,
                  px->data.begin() + (o * k + start + len) * inner, d.begin() + o * len * inner);
    bool tracked = track_grad<T>({x});
    return make_node<T>(sh, std::move(d), tracked, {px},
                        [px, start, len, outer, inner, k](TensorImpl<T>& self) {
                            if (!px->requires_grad) return;
                            px->ensure_grad();
                            for (size_t o = 0; o < outer; ++o)
                                for (size_t j = 0; j < len * inner; ++j)
                                    px->grad[(o * k + start) * inner + j] +=
                                        self.grad[o * len * inner + j];
                        });
}

// ---------------------------------------------------------------------------
// Matrix multiply, 2-D only: [m,k] x [k,n] -> [m,n]

template <typename T>
inline Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        shape_error("matmul", a.shape(), b.shape());
    const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<T> out(m * n, T(0));
    auto pa = a.impl(), pb = b.impl();
    for (size_t i = 0; i < m; ++i)
        for (size_t l = 0; l < k; ++l) {
            T av = pa->data[i * k + l];
            if (av == T(0)) continue;
            const T* brow = pb->data.data() + l * n;
            T* orow = out.data() + i * n;
            for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    bool tracked = track_grad<T>({a, b});
    return make_node<T>(Shape{m, n}, std::move(out), tracked, {pa, pb},
                        [pa, pb, m, k, n](TensorImpl<T>& self) {
                            if (pa->requires_grad) {
                                pa->ensure_grad();
                                for (size_t i = 0; i < m; ++i)
                                    for (size_t l = 0; l < k; ++l) {
                                        T acc = 0;
                                        for (size_t j = 0; j < n; ++j)
                                            acc += self.grad[i * n + j] * pb->data[l * n + j];
                                        pa->grad[i * k + l] += acc;
                                    }
                            }
                            if (pb->requires_grad) {
                                pb->ensure_grad();
                                for (size_t l = 0; l < k; ++l)
                                    for (size_t j = 0; j < n; ++j) {
                                        T acc = 0;
                                        for (size_t i = 0; i < m; ++i)
                                            acc += pa->data[i * k + l] * self.grad[i * n + j];
                                        pb->grad[l * n + j] += acc;
                                    }
                            }
                        });
}

// ---------------------------------------------------------------------------
// Softmax along an axis; max-subtracted for stability. The subtracted max is
// detached (shift invariance keeps value and gradient unchanged).

template <typename T>
inline Tensor<T> softmax(const Tensor<T>& x, size_t axis) {
    if (axis >= x.rank()) op_error("softmax", "axis out of range");
    if (x.shape()[axis] == 0) op_error("softmax", "empty axis");
    Tensor<T> m = max_axis(x, axis).detach();
    Tensor<T> e = exp_t(sub(x, m));
    Tensor<T> s = sum_axes(e, {axis});
    return div(e, s);
}

template <typename T>
inline Tensor<T> ones_like(const Tensor<T>& x) {
    return Tensor<T>::full(x.shape(), T(1));
}

}  // namespace fseg
