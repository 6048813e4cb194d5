#pragma once

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
#include <utility>
#include <vector>

#include "milpool/rng.hpp"

namespace milpool {

using Shape = std::vector<std::size_t>;

enum class Mode { train, eval };

namespace detail {

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

struct TensorData;

// Provenance of a non-leaf tensor: the op tag, the inputs it was computed
// from, and a closure that pushes this tensor's gradient into them.
struct GraphNode {
    std::string op;
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::function<void(TensorData&)> backprop;
};

struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first needed
    std::unique_ptr<GraphNode> node;

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
    }
};

}  // namespace detail

// Dense double-precision array with optional reverse-mode provenance.
// Copying a Tensor copies the handle, not the storage: parameter tensors are
// shared between the model and the graphs built from it.
class Tensor {
public:
    Tensor() = default;

    static Tensor leaf(Shape shape, std::vector<double> values) {
        if (detail::shape_numel(shape) != values.size()) {
            throw std::invalid_argument("Tensor: shape " + detail::shape_str(shape) +
                                        " does not match " + std::to_string(values.size()) +
                                        " values");
        }
        auto d = std::make_shared<detail::TensorData>();
        d->shape = std::move(shape);
        d->values = std::move(values);
        return Tensor(std::move(d));
    }

    static Tensor zeros(Shape shape) {
        std::vector<double> v(detail::shape_numel(shape), 0.0);
        return leaf(std::move(shape), std::move(v));
    }

    static Tensor full(Shape shape, double fill) {
        std::vector<double> v(detail::shape_numel(shape), fill);
        return leaf(std::move(shape), std::move(v));
    }

    static Tensor scalar(double v) { return leaf({1}, {v}); }

    static Tensor uniform(Shape shape, double lo, double hi, RngStream& rng) {
        std::vector<double> v(detail::shape_numel(shape));
        for (double& x : v) x = rng.uniform(lo, hi);
        return leaf(std::move(shape), std::move(v));
    }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::size_t size() const { return d_->values.size(); }
    std::size_t rank() const { return d_->shape.size(); }

    std::size_t rows() const { require_rank2("rows"); return d_->shape[0]; }
    std::size_t cols() const { require_rank2("cols"); return d_->shape[1]; }

    const std::vector<double>& values() const { return d_->values; }
    std::vector<double>& mutable_values() { return d_->values; }

    double at(std::size_t i) const { return d_->values.at(i); }
    double at(std::size_t r, std::size_t c) const {
        require_rank2("at");
        return d_->values.at(r * d_->shape[1] + c);
    }

    // Scalar payload; shape must be exactly one element.
    double value() const {
        if (size() != 1) {
            throw std::invalid_argument("Tensor::value: tensor " + detail::shape_str(shape()) +
                                        " is not scalar");
        }
        return d_->values[0];
    }

    bool is_leaf() const { return d_->node == nullptr; }
    const std::string& op() const {
        static const std::string kLeaf = "leaf";
        return d_->node ? d_->node->op : kLeaf;
    }

    bool has_grad() const { return !d_->grad.empty(); }
    const std::vector<double>& grad() const {
        d_->ensure_grad();
        return d_->grad;
    }
    void zero_grad() {
        if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
    }

    std::shared_ptr<detail::TensorData> data() const { return d_; }

    static Tensor from_node(Shape shape, std::vector<double> values, std::string op,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::TensorData&)> backprop) {
        Tensor t = leaf(std::move(shape), std::move(values));
        auto node = std::make_unique<detail::GraphNode>();
        node->op = std::move(op);
        node->inputs.reserve(inputs.size());
        for (const Tensor& in : inputs) node->inputs.push_back(in.d_);
        node->backprop = std::move(backprop);
        t.d_->node = std::move(node);
        return t;
    }

private:
    explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}

    void require_rank2(const char* what) const {
        if (rank() != 2) {
            throw std::invalid_argument(std::string("Tensor::") + what + ": tensor " +
                                        detail::shape_str(shape()) + " is not 2-D");
        }
    }

    std::shared_ptr<detail::TensorData> d_;
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

inline void accumulate(TensorData& dst, const std::vector<double>& add) {
    dst.ensure_grad();
    for (std::size_t i = 0; i < add.size(); ++i) dst.grad[i] += add[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (detail::shape_numel(shape) != x.size()) {
        throw std::invalid_argument("reshape: cannot view " + detail::shape_str(x.shape()) +
                                    " as " + detail::shape_str(shape));
    }
    auto xd = x.data();
    return Tensor::from_node(std::move(shape), x.values(), "reshape", {x},
                             [xd](detail::TensorData& out) {
                                 detail::accumulate(*xd, out.grad);
                             });
}

inline Tensor transpose(const Tensor& x) {
    std::size_t r = x.rows(), c = x.cols();
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v[j * r + i] = x.values()[i * c + j];
    auto xd = x.data();
    return Tensor::from_node({c, r}, std::move(v), "transpose", {x},
                             [xd, r, c](detail::TensorData& out) {
                                 xd->ensure_grad();
                                 for (std::size_t i = 0; i < r; ++i)
                                     for (std::size_t j = 0; j < c; ++j)
                                         xd->grad[i * c + j] += out.grad[j * r + i];
                             });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: incompatible shapes " +
                                    detail::shape_str(a.shape()) + " and " +
                                    detail::shape_str(b.shape()));
    }
    const std::size_t R = a.rows(), K = a.cols(), C = b.cols();
    std::vector<double> v(R * C, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t k = 0; k < K; ++k) {
            double aik = av[i * K + k];
            for (std::size_t j = 0; j < C; ++j) v[i * C + j] += aik * bv[k * C + j];
        }
    auto ad = a.data();
    auto bd = b.data();
    return Tensor::from_node(
        {R, C}, std::move(v), "matmul", {a, b}, [ad, bd, R, K, C](detail::TensorData& out) {
            ad->ensure_grad();
            bd->ensure_grad();
            const auto& g = out.grad;
            // dA += G * B^T
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t j = 0; j < C; ++j) {
                    double gij = g[i * C + j];
                    for (std::size_t k = 0; k < K; ++k)
                        ad->grad[i * K + k] += gij * bd->values[k * C + j];
                }
            // dB += A^T * G
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t i = 0; i < R; ++i) {
                    double aik = ad->values[i * K + k];
                    for (std::size_t j = 0; j < C; ++j)
                        bd->grad[k * C + j] += aik * g[i * C + j];
                }
        });
}

// mat[R x C] + row broadcast over rows; the bias-add of a linear layer.
inline Tensor add_rowvec(const Tensor& mat, const Tensor& row) {
    if (mat.rank() != 2 || row.size() != mat.cols()) {
        throw std::invalid_argument("add_rowvec: incompatible shapes " +
                                    detail::shape_str(mat.shape()) + " and " +
                                    detail::shape_str(row.shape()));
    }
    const std::size_t R = mat.rows(), C = mat.cols();
    std::vector<double> v(mat.values());
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) v[i * C + j] += row.values()[j];
    auto md = mat.data();
    auto rd = row.data();
    return Tensor::from_node({R, C}, std::move(v), "add_rowvec", {mat, row},
                             [md, rd, R, C](detail::TensorData& out) {
                                 md->ensure_grad();
                                 rd->ensure_grad();
                                 for (std::size_t i = 0; i < R; ++i)
                                     for (std::size_t j = 0; j < C; ++j) {
                                         md->grad[i * C + j] += out.grad[i * C + j];
                                         rd->grad[j] += out.grad[i * C + j];
                                     }
                             });
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor unary_op(const Tensor& x, const char* tag,
                       const std::function<double(double)>& f,
                       const std::function<double(double /*x*/, double /*y*/)>& dfdx) {
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(x.values()[i]);
    auto xd = x.data();
    std::vector<double> y = v;
    return Tensor::from_node(x.shape(), std::move(v), tag, {x},
                             [xd, y = std::move(y), dfdx](detail::TensorData& out) {
                                 xd->ensure_grad();
                                 for (std::size_t i = 0; i < out.grad.size(); ++i)
                                     xd->grad[i] += out.grad[i] * dfdx(xd->values[i], y[i]);
                             });
}

}  // namespace detail

inline Tensor relu(const Tensor& x) {
    return detail::unary_op(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary_op(
        x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
    return detail::unary_op(
        x, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& x) {
    return detail::unary_op(
        x, "exp", [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
    for (double v : x.values()) {
        if (!(v > 0.0)) {
            throw std::domain_error("log: input " + std::to_string(v) +
                                    " is not strictly positive");
        }
    }
    return detail::unary_op(
        x, "log", [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

inline Tensor abs(const Tensor& x) {
    return detail::unary_op(
        x, "abs", [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// Gradient is passed only strictly inside (lo, hi); at or beyond the bounds
// the output is constant.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
    return detail::unary_op(
        x, "clamp", [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

inline Tensor scale(const Tensor& x, double c) {
    return detail::unary_op(
        x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

namespace detail {

inline Tensor binary_op(const Tensor& a, const Tensor& b, const char* tag,
                        const std::function<double(double, double)>& f,
                        const std::function<double(double, double)>& dfda,
                        const std::function<double(double, double)>& dfdb) {
    require_same_shape(a, b, tag);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(a.values()[i], b.values()[i]);
    auto ad = a.data();
    auto bd = b.data();
    return Tensor::from_node(a.shape(), std::move(v), tag, {a, b},
                             [ad, bd, dfda, dfdb](detail::TensorData& out) {
                                 ad->ensure_grad();
                                 bd->ensure_grad();
                                 for (std::size_t i = 0; i < out.grad.size(); ++i) {
                                     double x = ad->values[i], y = bd->values[i];
                                     ad->grad[i] += out.grad[i] * dfda(x, y);
                                     bd->grad[i] += out.grad[i] * dfdb(x, y);
                                 }
                             });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
    double total = std::accumulate(x.values().begin(), x.values().end(), 0.0);
    auto xd = x.data();
    return Tensor::from_node({1}, {total}, "sum", {x}, [xd](detail::TensorData& out) {
        xd->ensure_grad();
        for (double& g : xd->grad) g += out.grad[0];
    });
}

// ---------------------------------------------------------------------------
// Softmax and dropout
// ---------------------------------------------------------------------------

// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) {
        throw std::invalid_argument("softmax_rows: tensor " + detail::shape_str(x.shape()) +
                                    " is not 2-D");
    }
    for (double v : x.values()) {
        if (!std::isfinite(v)) {
            throw std::domain_error("softmax_rows: non-finite input");
        }
    }
    const std::size_t R = x.rows(), C = x.cols();
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < R; ++i) {
        const double* in = x.values().data() + i * C;
        double m = *std::max_element(in, in + C);
        double z = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            v[i * C + j] = std::exp(in[j] - m);
            z += v[i * C + j];
        }
        for (std::size_t j = 0; j < C; ++j) v[i * C + j] /= z;
    }
    auto xd = x.data();
    std::vector<double> y = v;
    return Tensor::from_node({R, C}, std::move(v), "softmax_rows", {x},
                             [xd, y = std::move(y), R, C](detail::TensorData& out) {
                                 xd->ensure_grad();
                                 for (std::size_t i = 0; i < R; ++i) {
                                     double dot = 0.0;
                                     for (std::size_t j = 0; j < C; ++j)
                                         dot += out.grad[i * C + j] * y[i * C + j];
                                     for (std::size_t j = 0; j < C; ++j)
                                         xd->grad[i * C + j] +=
                                             y[i * C + j] * (out.grad[i * C + j] - dot);
                                 }
                             });
}

// Inverted dropout: train mode zeroes each element with probability p and
// scales survivors by 1/(1-p); eval mode is the identity.
inline Tensor dropout(const Tensor& x, double p, Mode mode, RngStream& rng) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw std::invalid_argument("dropout: probability " + std::to_string(p) +
                                    " outside [0, 1)");
    }
    if (mode == Mode::eval || p == 0.0) {
        auto xd = x.data();
        return Tensor::from_node(x.shape(), x.values(), "dropout", {x},
                                 [xd](detail::TensorData& out) {
                                     detail::accumulate(*xd, out.grad);
                                 });
    }
    const double keep = 1.0 - p;
    std::vector<double> mask(x.size());
    for (double& m : mask) m = (rng.uniform01() < p) ? 0.0 : 1.0 / keep;
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.values()[i] * mask[i];
    auto xd = x.data();
    return Tensor::from_node(x.shape(), std::move(v), "dropout", {x},
                             [xd, mask = std::move(mask)](detail::TensorData& out) {
                                 xd->ensure_grad();
                                 for (std::size_t i = 0; i < out.grad.size(); ++i)
                                     xd->grad[i] += out.grad[i] * mask[i];
                             });
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Every tensor reachable through
// provenance nodes receives (accumulates) its gradient; each node's backprop
// runs exactly once, in reverse topological order.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw std::invalid_argument("backward: loss " + detail::shape_str(loss.shape()) +
                                    " is not scalar");
    }
    using detail::TensorData;
    std::vector<TensorData*> topo;
    std::unordered_set<TensorData*> seen;
    std::vector<std::pair<TensorData*, std::size_t>> stack;
    stack.emplace_back(loss.data().get(), 0);
    seen.insert(loss.data().get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        std::size_t n_inputs = node->node ? node->node->inputs.size() : 0;
        if (next_child < n_inputs) {
            TensorData* child = node->node->inputs[next_child++].get();
            if (seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    // Interior grads are scratch space of this sweep; only leaf grads persist
    // and accumulate across calls.
    for (TensorData* t : topo) {
        if (t->node && !t->grad.empty()) std::fill(t->grad.begin(), t->grad.end(), 0.0);
    }
    // topo is child-before-parent; walk it parent-first.
    loss.data()->ensure_grad();
    loss.data()->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorData* t = *it;
        if (t->node && t->node->backprop) {
            t->ensure_grad();
            t->node->backprop(*t);
        }
    }
}

}  // namespace milpool
