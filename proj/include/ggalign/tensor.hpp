#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "ggalign/errors.hpp"

namespace ggalign {

using Shape = std::vector<std::size_t>;

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> parents;
    // Pulls this node's grad into the parents' grads. Captures a raw
    // pointer to self; only valid while the graph is alive.
    std::function<void()> backward;
};

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

}  // namespace detail

// Dense row-major 64-bit float tensor participating in a reverse-mode tape.
// Value-semantic handle; the underlying node is shared. Values are immutable
// after construction by convention — mutation is reserved for parameter
// updates between tape builds (see Tensor::values()).
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (detail::shape_numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape product " +
                             std::to_string(detail::shape_numel(shape)));
        impl_ = std::make_shared<detail::TensorImpl>();
        impl_->shape = std::move(shape);
        impl_->value = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> d(detail::shape_numel(shape), 0.0);
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        std::vector<double> d(detail::shape_numel(shape), v);
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    static Tensor identity(std::size_t n, bool requires_grad = false) {
        Tensor t = zeros({n, n}, requires_grad);
        for (std::size_t i = 0; i < n; ++i) t.values()[i * n + i] = 1.0;
        return t;
    }

    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        std::normal_distribution<double> nd(0.0, stddev);
        std::vector<double> d(detail::shape_numel(shape));
        for (double& x : d) x = nd(rng);
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t numel() const { return impl_->value.size(); }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::size_t rows() const { return impl_->shape.at(0); }
    std::size_t cols() const { return impl_->shape.at(1); }
    bool requires_grad() const { return impl_->requires_grad; }

    const std::vector<double>& values() const { return impl_->value; }
    std::vector<double>& values() { return impl_->value; }
    const std::vector<double>& grad() const { return impl_->grad; }
    std::vector<double>& grad() { return impl_->grad; }

    double item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor");
        return impl_->value[0];
    }

    double at(std::size_t i) const { return impl_->value.at(i); }
    double at(std::size_t i, std::size_t j) const {
        return impl_->value.at(i * cols() + j);
    }

    void zero_grad() { impl_->grad.assign(impl_->value.size(), 0.0); }

    // Reverse pass from a scalar root. Zeroes grads across the reachable
    // graph, seeds d(root)/d(root) = 1 and accumulates into every node.
    void backward() const {
        if (numel() != 1) throw ShapeError("backward() requires a scalar root");
        std::vector<detail::TensorImpl*> topo;
        std::unordered_set<detail::TensorImpl*> seen;
        topo_sort(impl_.get(), seen, topo);
        for (auto* n : topo) n->grad.assign(n->value.size(), 0.0);
        impl_->grad[0] = 1.0;
        for (auto it = topo.rbegin(); it != topo.rend(); ++it)
            if ((*it)->backward) (*it)->backward();
    }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    static void topo_sort(detail::TensorImpl* root,
                          std::unordered_set<detail::TensorImpl*>& seen,
                          std::vector<detail::TensorImpl*>& out) {
        // Iterative post-order DFS; graphs can be deep for long losses.
        struct Frame { detail::TensorImpl* node; std::size_t next_child; };
        std::vector<Frame> stack;
        if (seen.insert(root).second) stack.push_back({root, 0});
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_child < f.node->parents.size()) {
                detail::TensorImpl* child = f.node->parents[f.next_child++].get();
                if (seen.insert(child).second) stack.push_back({child, 0});
            } else {
                out.push_back(f.node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericError(std::string(op) + " produced a non-finite value");
}

inline Tensor make_node(Shape shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(TensorImpl*)> backward,
                        const char* op) {
    check_finite(value, op);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(value);
    impl->requires_grad = false;
    for (auto& p : parents) impl->parents.push_back(p.impl());
    TensorImpl* self = impl.get();
    if (backward) impl->backward = [self, backward]() { backward(self); };
    return Tensor(std::move(impl));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": operand shapes differ");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return detail::make_node(a.shape(), std::move(out), {a, b},
        [](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            auto& gb = self->parents[1]->grad;
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                ga[i] += self->grad[i];
                gb[i] += self->grad[i];
            }
        }, "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return detail::make_node(a.shape(), std::move(out), {a, b},
        [](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            auto& gb = self->parents[1]->grad;
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                ga[i] += self->grad[i];
                gb[i] -= self->grad[i];
            }
        }, "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return detail::make_node(a.shape(), std::move(out), {a, b},
        [](detail::TensorImpl* self) {
            auto& pa = self->parents[0];
            auto& pb = self->parents[1];
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                pa->grad[i] += self->grad[i] * pb->value[i];
                pb->grad[i] += self->grad[i] * pa->value[i];
            }
        }, "mul");
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
    return detail::make_node(a.shape(), std::move(out), {a, b},
        [](detail::TensorImpl* self) {
            auto& pa = self->parents[0];
            auto& pb = self->parents[1];
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                double inv = 1.0 / pb->value[i];
                pa->grad[i] += self->grad[i] * inv;
                pb->grad[i] -= self->grad[i] * pa->value[i] * inv * inv;
            }
        }, "div");
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
    return detail::make_node(a.shape(), std::move(out), {a},
        [c](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            for (std::size_t i = 0; i < self->grad.size(); ++i) ga[i] += self->grad[i] * c;
        }, "scale");
}

inline Tensor add_const(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
    return detail::make_node(a.shape(), std::move(out), {a},
        [](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            for (std::size_t i = 0; i < self->grad.size(); ++i) ga[i] += self->grad[i];
        }, "add_const");
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, a.values()[i]);
    return detail::make_node(a.shape(), std::move(out), {a},
        [](detail::TensorImpl* self) {
            auto& pa = self->parents[0];
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                if (pa->value[i] > 0.0) pa->grad[i] += self->grad[i];
        }, "relu");
}

inline Tensor exp_elem(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
    return detail::make_node(a.shape(), std::move(out), {a},
        [](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                ga[i] += self->grad[i] * self->value[i];
        }, "exp");
}

inline Tensor log_elem(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (a.values()[i] <= 0.0)
            throw DegenerateInputError("log of non-positive value");
        out[i] = std::log(a.values()[i]);
    }
    return detail::make_node(a.shape(), std::move(out), {a},
        [](detail::TensorImpl* self) {
            auto& pa = self->parents[0];
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                pa->grad[i] += self->grad[i] / pa->value[i];
        }, "log");
}

inline Tensor abs_elem(const Tensor& a) {
    // Subgradient 0 at the kink.
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a.values()[i]);
    return detail::make_node(a.shape(), std::move(out), {a},
        [](detail::TensorImpl* self) {
            auto& pa = self->parents[0];
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                double s = pa->value[i] > 0.0 ? 1.0 : (pa->value[i] < 0.0 ? -1.0 : 0.0);
                pa->grad[i] += self->grad[i] * s;
            }
        }, "abs");
}

// Elementwise product with a constant (non-differentiated) mask.
inline Tensor mul_mask(const Tensor& a, const std::vector<double>& mask) {
    if (mask.size() != a.numel()) throw ShapeError("mul_mask: mask size mismatch");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * mask[i];
    return detail::make_node(a.shape(), std::move(out), {a},
        [mask](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                ga[i] += self->grad[i] * mask[i];
        }, "mul_mask");
}

// ---------------------------------------------------------------------------
// Reductions and structural ops
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    return detail::make_node({1}, {s}, {a},
        [](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            for (double& g : ga) g += self->grad[0];
        }, "sum");
}

// Mean over the row axis of an M x D matrix -> vector of length D.
inline Tensor mean_rows(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("mean_rows: expected a 2-D tensor");
    std::size_t m = a.rows(), d = a.cols();
    if (m == 0) throw DegenerateInputError("mean_rows: empty input");
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += a.values()[i * d + j];
    for (double& x : out) x /= static_cast<double>(m);
    return detail::make_node({d}, std::move(out), {a},
        [m, d](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            double inv = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    ga[i * d + j] += self->grad[j] * inv;
        }, "mean_rows");
}

inline Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: expected a 2-D tensor");
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
    return detail::make_node({n, m}, std::move(out), {a},
        [m, n](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    ga[i * n + j] += self->grad[j * m + i];
        }, "transpose");
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul: expected 2-D tensors");
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree (" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double av = a.values()[i * k + p];
            for (std::size_t j = 0; j < n; ++j)
                out[i * n + j] += av * b.values()[p * n + j];
        }
    return detail::make_node({m, n}, std::move(out), {a, b},
        [m, k, n](detail::TensorImpl* self) {
            auto& pa = self->parents[0];
            auto& pb = self->parents[1];
            // grad_a = g . b^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        s += self->grad[i * n + j] * pb->value[p * n + j];
                    pa->grad[i * k + p] += s;
                }
            // grad_b = a^T . g
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m; ++i)
                        s += pa->value[i * k + p] * self->grad[i * n + j];
                    pb->grad[p * n + j] += s;
                }
        }, "matmul");
}

// Broadcast add of a length-D row vector onto every row of an M x D matrix.
inline Tensor add_rowvec(const Tensor& x, const Tensor& r) {
    if (x.ndim() != 2 || r.ndim() != 1 || x.cols() != r.shape()[0])
        throw ShapeError("add_rowvec: shape mismatch");
    std::size_t m = x.rows(), d = x.cols();
    std::vector<double> out(m * d);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = x.values()[i * d + j] + r.values()[j];
    return detail::make_node({m, d}, std::move(out), {x, r},
        [m, d](detail::TensorImpl* self) {
            auto& gx = self->parents[0]->grad;
            auto& gr = self->parents[1]->grad;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    gx[i * d + j] += self->grad[i * d + j];
                    gr[j] += self->grad[i * d + j];
                }
        }, "add_rowvec");
}

inline Tensor sub_rowvec(const Tensor& x, const Tensor& r) {
    if (x.ndim() != 2 || r.ndim() != 1 || x.cols() != r.shape()[0])
        throw ShapeError("sub_rowvec: shape mismatch");
    std::size_t m = x.rows(), d = x.cols();
    std::vector<double> out(m * d);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = x.values()[i * d + j] - r.values()[j];
    return detail::make_node({m, d}, std::move(out), {x, r},
        [m, d](detail::TensorImpl* self) {
            auto& gx = self->parents[0]->grad;
            auto& gr = self->parents[1]->grad;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    gx[i * d + j] += self->grad[i * d + j];
                    gr[j] -= self->grad[i * d + j];
                }
        }, "sub_rowvec");
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
        throw ShapeError("concat_rows: column counts differ");
    std::size_t ma = a.rows(), mb = b.rows(), d = a.cols();
    std::vector<double> out;
    out.reserve((ma + mb) * d);
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    return detail::make_node({ma + mb, d}, std::move(out), {a, b},
        [ma, mb, d](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            auto& gb = self->parents[1]->grad;
            for (std::size_t i = 0; i < ma * d; ++i) ga[i] += self->grad[i];
            for (std::size_t i = 0; i < mb * d; ++i) gb[i] += self->grad[ma * d + i];
        }, "concat_rows");
}

inline Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    if (a.ndim() != 2) throw ShapeError("slice_rows: expected a 2-D tensor");
    if (start + count > a.rows()) throw ShapeError("slice_rows: range out of bounds");
    std::size_t d = a.cols();
    std::vector<double> out(a.values().begin() + start * d,
                            a.values().begin() + (start + count) * d);
    return detail::make_node({count, d}, std::move(out), {a},
        [start, count, d](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            for (std::size_t i = 0; i < count * d; ++i)
                ga[start * d + i] += self->grad[i];
        }, "slice_rows");
}

// Extract one row of an M x D matrix as a length-D vector.
inline Tensor row(const Tensor& a, std::size_t i) {
    if (a.ndim() != 2) throw ShapeError("row: expected a 2-D tensor");
    if (i >= a.rows()) throw ShapeError("row: index out of bounds");
    std::size_t d = a.cols();
    std::vector<double> out(a.values().begin() + i * d, a.values().begin() + (i + 1) * d);
    return detail::make_node({d}, std::move(out), {a},
        [i, d](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += self->grad[j];
        }, "row");
}

// ---------------------------------------------------------------------------
// Neural ops
// ---------------------------------------------------------------------------

// Softmax over the last axis. Accepts a vector (one row) or a matrix.
inline Tensor softmax(const Tensor& a) {
    if (a.ndim() != 1 && a.ndim() != 2) throw ShapeError("softmax: expected 1-D or 2-D");
    std::size_t m = a.ndim() == 2 ? a.rows() : 1;
    std::size_t n = a.ndim() == 2 ? a.cols() : a.shape()[0];
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* x = a.values().data() + i * n;
        double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = std::exp(x[j] - mx) / z;
    }
    return detail::make_node(a.shape(), std::move(out), {a},
        [m, n](detail::TensorImpl* self) {
            auto& ga = self->parents[0]->grad;
            for (std::size_t i = 0; i < m; ++i) {
                const double* s = self->value.data() + i * n;
                const double* g = self->grad.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * s[j];
                for (std::size_t j = 0; j < n; ++j)
                    ga[i * n + j] += s[j] * (g[j] - dot);
            }
        }, "softmax");
}

// Per-row standardization (population variance, eps under the sqrt),
// then learned gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.ndim() != 2) throw ShapeError("layer_norm: expected a 2-D input");
    std::size_t m = x.rows(), d = x.cols();
    if (d < 2) throw ShapeError("layer_norm: feature dimension must be >= 2");
    if (gain.ndim() != 1 || gain.shape()[0] != d || bias.ndim() != 1 || bias.shape()[0] != d)
        throw ShapeError("layer_norm: gain/bias length must equal feature dimension");
    std::vector<double> out(m * d);
    auto xhat = std::make_shared<std::vector<double>>(m * d);
    auto inv_std = std::make_shared<std::vector<double>>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* xi = x.values().data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xi[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            double h = (xi[j] - mean) * inv;
            (*xhat)[i * d + j] = h;
            out[i * d + j] = gain.values()[j] * h + bias.values()[j];
        }
    }
    return detail::make_node({m, d}, std::move(out), {x, gain, bias},
        [m, d, xhat, inv_std](detail::TensorImpl* self) {
            auto& gx = self->parents[0]->grad;
            auto& gg = self->parents[1]->grad;
            auto& gb = self->parents[2]->grad;
            const auto& gain_v = self->parents[1]->value;
            for (std::size_t i = 0; i < m; ++i) {
                const double* g = self->grad.data() + i * d;
                const double* h = xhat->data() + i * d;
                double inv = (*inv_std)[i];
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double dh = g[j] * gain_v[j];
                    sum_dh += dh;
                    sum_dh_h += dh * h[j];
                    gg[j] += g[j] * h[j];
                    gb[j] += g[j];
                }
                double invd = 1.0 / static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    double dh = g[j] * gain_v[j];
                    gx[i * d + j] += inv * (dh - invd * sum_dh - h[j] * invd * sum_dh_h);
                }
            }
        }, "layer_norm");
}

inline Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
    if (u.ndim() != 1 || v.ndim() != 1 || u.shape() != v.shape())
        throw ShapeError("cosine_similarity: expected equal-length vectors");
    std::size_t d = u.numel();
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        dot += u.values()[j] * v.values()[j];
        nu += u.values()[j] * u.values()[j];
        nv += v.values()[j] * v.values()[j];
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    if (nu == 0.0 || nv == 0.0)
        throw DegenerateInputError("cosine_similarity: zero-norm input");
    double c = dot / (nu * nv);
    return detail::make_node({1}, {c}, {u, v},
        [d, nu, nv, c](detail::TensorImpl* self) {
            auto& pu = self->parents[0];
            auto& pv = self->parents[1];
            double g = self->grad[0];
            for (std::size_t j = 0; j < d; ++j) {
                pu->grad[j] += g * (pv->value[j] / (nu * nv) - c * pu->value[j] / (nu * nu));
                pv->grad[j] += g * (pu->value[j] / (nu * nv) - c * pv->value[j] / (nv * nv));
            }
        }, "cosine_similarity");
}

// Forward identity; backward deposits nothing into the wrapped tensor.
inline Tensor stop_grad(const Tensor& a) {
    return Tensor(a.shape(), a.values(), false);
}

// Weighted cross entropy over rows of logits: sum_i w_i * (-log softmax(l_i)[y_i])
// normalized by sum_i w_i.
inline Tensor weighted_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                     const std::vector<double>& weights) {
    if (logits.ndim() != 2) throw ShapeError("weighted_cross_entropy: expected 2-D logits");
    std::size_t m = logits.rows(), k = logits.cols();
    if (labels.size() != m || weights.size() != m)
        throw ShapeError("weighted_cross_entropy: label/weight count mismatch");
    double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (wsum <= 0.0)
        throw DegenerateInputError("weighted_cross_entropy: all weights zero");
    auto probs = std::make_shared<std::vector<double>>(m * k);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw ShapeError("weighted_cross_entropy: label out of range");
        const double* l = logits.values().data() + i * k;
        double mx = *std::max_element(l, l + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(l[j] - mx);
        for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(l[j] - mx) / z;
        loss += weights[i] * (std::log(z) - (l[y] - mx));
    }
    loss /= wsum;
    return detail::make_node({1}, {loss}, {logits},
        [m, k, labels, weights, wsum, probs](detail::TensorImpl* self) {
            auto& gl = self->parents[0]->grad;
            double g = self->grad[0] / wsum;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    double p = (*probs)[i * k + j];
                    double onehot = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
                    gl[i * k + j] += g * weights[i] * (p - onehot);
                }
        }, "weighted_cross_entropy");
}

}  // namespace ggalign
