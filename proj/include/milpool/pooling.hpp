#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "milpool/rng.hpp"
#include "milpool/tensor.hpp"

namespace milpool {

enum class PoolKind { max, mean, attention, distribution, distribution_attention };

inline const char* to_string(PoolKind k) {
    switch (k) {
        case PoolKind::max: return "max";
        case PoolKind::mean: return "mean";
        case PoolKind::attention: return "attention";
        case PoolKind::distribution: return "distribution";
        case PoolKind::distribution_attention: return "distribution_attention";
    }
    return "?";
}

inline PoolKind pool_kind_from_string(const std::string& s) {
    if (s == "max") return PoolKind::max;
    if (s == "mean") return PoolKind::mean;
    if (s == "attention") return PoolKind::attention;
    if (s == "distribution") return PoolKind::distribution;
    if (s == "distribution_attention") return PoolKind::distribution_attention;
    throw std::invalid_argument("unknown pooling kind '" + s + "'");
}

// Which filter to apply plus its hyperparameters. bins/sigma matter for the
// distribution kinds, attention_layers for the attention kinds (hidden layer
// sizes of the scoring network; the final linear layer to one score is
// implied).
struct PoolingSpec {
    PoolKind kind = PoolKind::mean;
    int bins = 0;
    double sigma = 0.0;
    std::vector<int> attention_layers;

    bool is_distribution() const {
        return kind == PoolKind::distribution || kind == PoolKind::distribution_attention;
    }
    bool has_attention() const {
        return kind == PoolKind::attention || kind == PoolKind::distribution_attention;
    }

    std::size_t output_width(std::size_t feature_width) const {
        return is_distribution() ? feature_width * static_cast<std::size_t>(bins)
                                 : feature_width;
    }

    void validate() const {
        if (is_distribution()) {
            if (bins < 2)
                throw std::invalid_argument("PoolingSpec: bins must be >= 2, got " +
                                            std::to_string(bins));
            if (!(sigma > 0.0))
                throw std::invalid_argument("PoolingSpec: sigma must be > 0, got " +
                                            std::to_string(sigma));
        }
    }
};

// One bag's extracted features, one instance per row.
struct FeatureBag {
    Tensor features;  // N x J

    std::size_t instances() const { return features.rows(); }
    std::size_t feature_width() const { return features.cols(); }
};

namespace detail {

inline void require_nonempty(const FeatureBag& bag, const char* op) {
    if (bag.features.rank() != 2 || bag.instances() == 0) {
        throw std::invalid_argument(std::string(op) + ": bag must have at least one instance");
    }
}

inline void require_unit_range(const FeatureBag& bag, const char* op) {
    for (double v : bag.features.values()) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument(std::string(op) + ": feature value " +
                                        std::to_string(v) +
                                        " outside [0,1]; distribution pooling requires a "
                                        "bounded final extractor activation");
        }
    }
}

}  // namespace detail

// h[j] = max_i f[i][j]. The gradient of h[j] goes to the first argmax row.
inline Tensor pool_max(const FeatureBag& bag) {
    detail::require_nonempty(bag, "pool_max");
    const std::size_t N = bag.instances(), J = bag.feature_width();
    const auto& f = bag.features.values();
    std::vector<double> h(J);
    std::vector<std::size_t> argmax(J, 0);
    for (std::size_t j = 0; j < J; ++j) {
        double best = f[j];
        for (std::size_t i = 1; i < N; ++i) {
            if (f[i * J + j] > best) {
                best = f[i * J + j];
                argmax[j] = i;
            }
        }
        h[j] = best;
    }
    auto fd = bag.features.data();
    return Tensor::from_node({J}, std::move(h), "pool_max", {bag.features},
                             [fd, argmax = std::move(argmax), J](detail::TensorData& out) {
                                 fd->ensure_grad();
                                 for (std::size_t j = 0; j < J; ++j)
                                     fd->grad[argmax[j] * J + j] += out.grad[j];
                             });
}

// h[j] = (1/N) sum_i f[i][j].
inline Tensor pool_mean(const FeatureBag& bag) {
    detail::require_nonempty(bag, "pool_mean");
    const std::size_t N = bag.instances(), J = bag.feature_width();
    const auto& f = bag.features.values();
    std::vector<double> h(J, 0.0);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < J; ++j) h[j] += f[i * J + j];
    for (double& v : h) v /= static_cast<double>(N);
    auto fd = bag.features.data();
    return Tensor::from_node({J}, std::move(h), "pool_mean", {bag.features},
                             [fd, N, J](detail::TensorData& out) {
                                 fd->ensure_grad();
                                 const double inv = 1.0 / static_cast<double>(N);
                                 for (std::size_t i = 0; i < N; ++i)
                                     for (std::size_t j = 0; j < J; ++j)
                                         fd->grad[i * J + j] += out.grad[j] * inv;
                             });
}

// Instance scoring network W of the attention filters: an MLP from a J-vector
// to one score, tanh on hidden layers, linear output. Applied row-wise to the
// whole bag at once.
class AttentionNet {
public:
    AttentionNet() = default;

    AttentionNet(std::size_t feature_width, const std::vector<int>& hidden, RngStream& rng) {
        std::size_t in = feature_width;
        for (int units : hidden) {
            if (units <= 0)
                throw std::invalid_argument("AttentionNet: layer size must be positive");
            push_layer(in, static_cast<std::size_t>(units), rng);
            in = static_cast<std::size_t>(units);
        }
        push_layer(in, 1, rng);
    }

    // N x J features -> N x 1 scores.
    Tensor scores(const Tensor& features) const {
        Tensor x = features;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            x = add_rowvec(matmul(x, weights_[l]), biases_[l]);
            if (l + 1 < weights_.size()) x = tanh(x);
        }
        return x;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            out.push_back(weights_[l]);
            out.push_back(biases_[l]);
        }
        return out;
    }

private:
    void push_layer(std::size_t in, std::size_t units, RngStream& rng) {
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        weights_.push_back(Tensor::uniform({in, units}, -bound, bound, rng));
        biases_.push_back(Tensor::zeros({units}));
    }

    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
};

// w_i = softmax over instances of W(f_i); positive, sums to one, and
// permutation-equivariant.
inline Tensor attention_weights(const FeatureBag& bag, const AttentionNet& net) {
    detail::require_nonempty(bag, "attention_weights");
    const std::size_t N = bag.instances();
    Tensor s = net.scores(bag.features);        // N x 1
    Tensor row = reshape(s, {1, N});            // softmax across instances
    return reshape(softmax_rows(row), {N});
}

// h[j] = sum_i w_i f[i][j]; gradients flow into both the features and the
// scoring network.
inline Tensor pool_attention(const FeatureBag& bag, const AttentionNet& net) {
    detail::require_nonempty(bag, "pool_attention");
    const std::size_t N = bag.instances(), J = bag.feature_width();
    Tensor w = attention_weights(bag, net);
    Tensor h = matmul(reshape(w, {1, N}), bag.features);  // 1 x J
    return reshape(h, {J});
}

namespace detail {

// Shared kernel of the two distribution filters:
//   p~[j](v_b) = sum_i w_i * (1/sqrt(2 pi sigma^2)) exp(-(v_b - f_ij)^2 / (2 sigma^2))
// sampled on the fixed grid v_b = b/(M-1), b = 0..M-1, flattened j-major.
// `weight_tensor` is empty for the uniform 1/N case.
inline Tensor kde_pool(const FeatureBag& bag, int bins, double sigma,
                       const Tensor* weight_tensor, const char* op) {
    require_nonempty(bag, op);
    if (bins < 2)
        throw std::invalid_argument(std::string(op) + ": bins must be >= 2, got " +
                                    std::to_string(bins));
    if (!(sigma > 0.0))
        throw std::invalid_argument(std::string(op) + ": sigma must be > 0, got " +
                                    std::to_string(sigma));
    require_unit_range(bag, op);

    const std::size_t N = bag.instances(), J = bag.feature_width();
    const std::size_t M = static_cast<std::size_t>(bins);
    const auto& f = bag.features.values();
    const double norm = 1.0 / (sigma * std::sqrt(2.0 * 3.14159265358979323846));
    const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    const double spacing = 1.0 / static_cast<double>(M - 1);

    std::vector<double> w(N, 1.0 / static_cast<double>(N));
    if (weight_tensor) {
        if (weight_tensor->size() != N)
            throw std::invalid_argument(std::string(op) + ": weight vector " +
                                        detail::shape_str(weight_tensor->shape()) +
                                        " does not match bag of " + std::to_string(N) +
                                        " instances");
        w = weight_tensor->values();
    }

    // kernel[i*J*M + j*M + b], cached for the backward pass
    std::vector<double> kernel(N * J * M);
    std::vector<double> h(J * M, 0.0);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < J; ++j) {
            double fij = f[i * J + j];
            for (std::size_t b = 0; b < M; ++b) {
                double d = spacing * static_cast<double>(b) - fij;
                double k = norm * std::exp(-d * d * inv_two_sigma2);
                kernel[(i * J + j) * M + b] = k;
                h[j * M + b] += w[i] * k;
            }
        }

    auto fd = bag.features.data();
    std::vector<Tensor> inputs = {bag.features};
    std::shared_ptr<detail::TensorData> wd;
    if (weight_tensor) {
        wd = weight_tensor->data();
        inputs.push_back(*weight_tensor);
    }
    const double inv_sigma2 = 1.0 / (sigma * sigma);
    return Tensor::from_node(
        {J * M}, std::move(h), op, std::move(inputs),
        [fd, wd, w = std::move(w), kernel = std::move(kernel), N, J, M, spacing,
         inv_sigma2](detail::TensorData& out) {
            fd->ensure_grad();
            if (wd) wd->ensure_grad();
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < J; ++j) {
                    double fij = fd->values[i * J + j];
                    double df = 0.0, dw = 0.0;
                    const double* krow = kernel.data() + (i * J + j) * M;
                    const double* grow = out.grad.data() + j * M;
                    for (std::size_t b = 0; b < M; ++b) {
                        double vb = spacing * static_cast<double>(b);
                        df += grow[b] * krow[b] * (vb - fij);
                        dw += grow[b] * krow[b];
                    }
                    fd->grad[i * J + j] += w[i] * df * inv_sigma2;
                    if (wd) wd->grad[i] += dw;
                }
        });
}

}  // namespace detail

// Marginal KDE of each feature, uniform instance weights 1/N. Output [J*M].
inline Tensor pool_distribution(const FeatureBag& bag, int bins, double sigma) {
    return detail::kde_pool(bag, bins, sigma, nullptr, "pool_distribution");
}

// Marginal KDE with learned attention weights in place of 1/N.
inline Tensor pool_distribution_attention(const FeatureBag& bag, const AttentionNet& net,
                                          int bins, double sigma) {
    detail::require_nonempty(bag, "pool_distribution_attention");
    Tensor w = attention_weights(bag, net);
    return detail::kde_pool(bag, bins, sigma, &w, "pool_distribution_attention");
}

// Dispatch on the spec; `net` is required for the attention kinds.
inline Tensor apply_pooling(const FeatureBag& bag, const PoolingSpec& spec,
                            const AttentionNet* net) {
    if (spec.has_attention() && net == nullptr) {
        throw std::invalid_argument("apply_pooling: attention kind without a scoring network");
    }
    switch (spec.kind) {
        case PoolKind::max: return pool_max(bag);
        case PoolKind::mean: return pool_mean(bag);
        case PoolKind::attention: return pool_attention(bag, *net);
        case PoolKind::distribution: return pool_distribution(bag, spec.bins, spec.sigma);
        case PoolKind::distribution_attention:
            return pool_distribution_attention(bag, *net, spec.bins, spec.sigma);
    }
    throw std::logic_error("apply_pooling: unreachable");
}

}  // namespace milpool
