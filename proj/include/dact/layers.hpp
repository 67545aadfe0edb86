// Differentiable layers: embedding lookup, temporal convolution with "same"
// zero padding, masked max-over-time pooling, dense layers with relu/softmax,
// cross-entropy, and vector concatenation. Every layer has an exact backward.

#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dact/tensor.hpp"

namespace dact {

enum class Activation { none, relu, softmax };

inline void init_uniform(Tensor& t, double lo, double hi, SeededRng& rng) {
    for (double& v : t.data()) v = rng.uniform(lo, hi);
}

/// Fan-scaled uniform initialization: U(-limit, limit) with
/// limit = sqrt(6 / (fan_in + fan_out)).
inline void init_fan_scaled(Tensor& t, std::size_t fan_in, std::size_t fan_out,
                            SeededRng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    init_uniform(t, -limit, limit, rng);
}

/// Token-index lookup into a V x d table. Row `pinned_zero_row` (the padding
/// row) stays all-zero: it is skipped by gradient accumulation, so padded
/// positions contribute exactly like the convolution's own zero padding.
class Embedding {
public:
    static constexpr std::size_t no_pinned_row = std::numeric_limits<std::size_t>::max();

    Embedding() = default;
    Embedding(Parameter table, std::size_t pinned_zero_row = no_pinned_row)
        : table_(std::move(table)), pinned_row_(pinned_zero_row) {
        if (table_.value.rank() != 2) {
            throw ConfigError("embedding table must be 2-dimensional");
        }
        if (pinned_row_ != no_pinned_row) {
            for (std::size_t k = 0; k < dim(); ++k) table_.value(pinned_row_, k) = 0.0;
        }
    }

    std::size_t vocab_size() const { return table_.value.dim(0); }
    std::size_t dim() const { return table_.value.dim(1); }

    /// [L] indices -> [L x d]; row i of the output is table row indices[i].
    Tensor forward(const std::vector<int>& indices) const {
        if (indices.empty()) throw ConfigError("embedding_forward: empty index sequence");
        const std::size_t d = dim();
        Tensor out({indices.size(), d});
        for (std::size_t i = 0; i < indices.size(); ++i) {
            check_index(indices[i]);
            const std::size_t row = static_cast<std::size_t>(indices[i]);
            for (std::size_t k = 0; k < d; ++k) out(i, k) = table_.value(row, k);
        }
        return out;
    }

    /// Accumulates upstream gradients into the looked-up rows. Repeated
    /// indices accumulate repeatedly. No-op for a non-trainable table.
    void backward(const std::vector<int>& indices, const Tensor& upstream) {
        if (!table_.trainable) return;
        const std::size_t d = dim();
        for (std::size_t i = 0; i < indices.size(); ++i) {
            check_index(indices[i]);
            const std::size_t row = static_cast<std::size_t>(indices[i]);
            if (row == pinned_row_) continue;
            for (std::size_t k = 0; k < d; ++k) table_.grad(row, k) += upstream(i, k);
        }
    }

    Parameter& table() { return table_; }
    const Parameter& table() const { return table_; }

private:
    void check_index(int idx) const {
        if (idx < 0 || static_cast<std::size_t>(idx) >= vocab_size()) {
            throw ConfigError("embedding index " + std::to_string(idx) +
                              " out of range [0, " + std::to_string(vocab_size()) + ")");
        }
    }

    Parameter table_;
    std::size_t pinned_row_ = no_pinned_row;
};

/// Window size, filter count and expected input width of one convolution.
struct ConvSpec {
    std::size_t window = 1;
    std::size_t filters = 1;
    std::size_t input_dim = 1;
};

/// 1-D convolution over the token axis with "same" zero padding: the output
/// has as many rows as the input for any window size. floor(w/2) zero rows
/// are assumed on the left and the remaining w-1-floor(w/2) on the right.
class TemporalConv {
public:
    TemporalConv() = default;

    TemporalConv(ConvSpec spec, Parameter weights, Parameter bias)
        : spec_(spec), weights_(std::move(weights)), bias_(std::move(bias)) {
        const auto& ws = weights_.value.shape();
        if (ws.size() != 3 || ws[0] != spec_.window || ws[1] != spec_.input_dim ||
            ws[2] != spec_.filters) {
            throw ConfigError("temporal conv weights must have shape w x d x F");
        }
        if (bias_.value.rank() != 1 || bias_.value.dim(0) != spec_.filters) {
            throw ConfigError("temporal conv bias must have shape F");
        }
    }

    static TemporalConv make(ConvSpec spec, SeededRng& rng, const std::string& name) {
        Tensor w({spec.window, spec.input_dim, spec.filters});
        init_fan_scaled(w, spec.window * spec.input_dim, spec.window * spec.filters, rng);
        return TemporalConv(spec, Parameter(name + ".weights", std::move(w)),
                            Parameter(name + ".bias", Tensor({spec.filters})));
    }

    const ConvSpec& spec() const { return spec_; }

    /// [L x d] -> [L x F]:
    /// out[t][f] = bias[f] + sum_{j<w} sum_{k<d} pad(in)[t+j][k] * W[j][k][f]
    Tensor forward(const Tensor& input) const {
        check_input(input);
        const std::size_t rows = input.dim(0);
        const std::size_t d = spec_.input_dim;
        const std::size_t f_count = spec_.filters;
        const std::size_t left = spec_.window / 2;

        Tensor out({rows, f_count});
        for (std::size_t t = 0; t < rows; ++t) {
            for (std::size_t f = 0; f < f_count; ++f) out(t, f) = bias_.value(f);
            for (std::size_t j = 0; j < spec_.window; ++j) {
                const std::ptrdiff_t r =
                    static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(left);
                if (r < 0 || r >= static_cast<std::ptrdiff_t>(rows)) continue;
                for (std::size_t k = 0; k < d; ++k) {
                    const double x = input(static_cast<std::size_t>(r), k);
                    if (x == 0.0) continue;
                    const double* w_row = &weights_.value(j, k, 0);
                    double* out_row = &out(t, 0);
                    for (std::size_t f = 0; f < f_count; ++f) out_row[f] += x * w_row[f];
                }
            }
        }
        return out;
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    Tensor backward(const Tensor& input, const Tensor& upstream) {
        check_input(input);
        const std::size_t rows = input.dim(0);
        const std::size_t d = spec_.input_dim;
        const std::size_t f_count = spec_.filters;
        const std::size_t left = spec_.window / 2;

        Tensor input_grad({rows, d});
        for (std::size_t t = 0; t < rows; ++t) {
            const double* up_row = &upstream(t, 0);
            for (std::size_t f = 0; f < f_count; ++f) bias_.grad(f) += up_row[f];
            for (std::size_t j = 0; j < spec_.window; ++j) {
                const std::ptrdiff_t r =
                    static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(left);
                if (r < 0 || r >= static_cast<std::ptrdiff_t>(rows)) continue;
                const std::size_t rr = static_cast<std::size_t>(r);
                for (std::size_t k = 0; k < d; ++k) {
                    const double x = input(rr, k);
                    const double* w_row = &weights_.value(j, k, 0);
                    double* wg_row = &weights_.grad(j, k, 0);
                    double acc = 0.0;
                    for (std::size_t f = 0; f < f_count; ++f) {
                        wg_row[f] += x * up_row[f];
                        acc += w_row[f] * up_row[f];
                    }
                    input_grad(rr, k) += acc;
                }
            }
        }
        return input_grad;
    }

    Parameter& weights() { return weights_; }
    Parameter& bias() { return bias_; }
    const Parameter& weights() const { return weights_; }
    const Parameter& bias() const { return bias_; }

private:
    void check_input(const Tensor& input) const {
        if (input.rank() != 2 || input.dim(1) != spec_.input_dim) {
            throw ConfigError("temporal conv input width does not match spec input_dim");
        }
        if (input.dim(0) < 1) throw ConfigError("temporal conv input must have rows");
    }

    ConvSpec spec_;
    Parameter weights_;
    Parameter bias_;
};

/// Per-channel maximum over the first valid_length rows, with the first
/// maximal position recorded for a deterministic backward pass.
struct PoolResult {
    Tensor pooled;                    // [F]
    std::vector<std::size_t> argmax;  // first maximal row per channel
    std::size_t rows = 0;             // rows of the pooled input
};

inline PoolResult max_over_time(const Tensor& input, std::size_t valid_length) {
    if (input.rank() != 2) throw ConfigError("max_over_time expects an L x F input");
    const std::size_t rows = input.dim(0);
    const std::size_t channels = input.dim(1);
    if (valid_length == 0) throw ConfigError("max_over_time: empty segment (valid_length 0)");
    if (valid_length > rows) throw ConfigError("max_over_time: valid_length exceeds rows");

    PoolResult result;
    result.pooled = Tensor({channels});
    result.argmax.assign(channels, 0);
    result.rows = rows;
    for (std::size_t f = 0; f < channels; ++f) {
        double best = input(0, f);
        std::size_t best_t = 0;
        for (std::size_t t = 1; t < valid_length; ++t) {
            if (input(t, f) > best) {
                best = input(t, f);
                best_t = t;
            }
        }
        result.pooled(f) = best;
        result.argmax[f] = best_t;
    }
    return result;
}

/// Routes each channel's gradient to the recorded maximal position.
inline Tensor max_over_time_backward(const PoolResult& pool, const Tensor& upstream) {
    const std::size_t channels = pool.pooled.size();
    Tensor input_grad({pool.rows, channels});
    for (std::size_t f = 0; f < channels; ++f) {
        input_grad(pool.argmax[f], f) += upstream(f);
    }
    return input_grad;
}

/// Affine map x -> W^T x + b followed by an optional activation.
struct DenseCache {
    Tensor input;    // [n]
    Tensor preact;   // [m]
    Tensor output;   // [m]
};

class Dense {
public:
    Dense() = default;

    Dense(Parameter weights, Parameter bias, Activation activation)
        : weights_(std::move(weights)), bias_(std::move(bias)), activation_(activation) {
        if (weights_.value.rank() != 2) throw ConfigError("dense weights must be n x m");
        if (bias_.value.rank() != 1 || bias_.value.dim(0) != weights_.value.dim(1)) {
            throw ConfigError("dense bias length must match output dimension");
        }
    }

    static Dense make(std::size_t in_dim, std::size_t out_dim, Activation activation,
                      SeededRng& rng, const std::string& name) {
        Tensor w({in_dim, out_dim});
        init_fan_scaled(w, in_dim, out_dim, rng);
        return Dense(Parameter(name + ".weights", std::move(w)),
                     Parameter(name + ".bias", Tensor({out_dim})), activation);
    }

    std::size_t in_dim() const { return weights_.value.dim(0); }
    std::size_t out_dim() const { return weights_.value.dim(1); }
    Activation activation() const { return activation_; }

    Tensor forward(const Tensor& input, DenseCache* cache = nullptr) const {
        if (input.rank() != 1 || input.dim(0) != in_dim()) {
            throw ConfigError("dense input length " + std::to_string(input.size()) +
                              " does not match weight rows " + std::to_string(in_dim()));
        }
        const std::size_t n = in_dim();
        const std::size_t m = out_dim();
        Tensor pre({m});
        for (std::size_t j = 0; j < m; ++j) pre(j) = bias_.value(j);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = input(i);
            if (x == 0.0) continue;
            const double* w_row = &weights_.value(i, 0);
            for (std::size_t j = 0; j < m; ++j) pre(j) += x * w_row[j];
        }
        Tensor out = apply_activation(pre);
        if (cache) {
            cache->input = input;
            cache->preact = pre;
            cache->output = out;
        }
        return out;
    }

    /// Backward through activation and affine map; accumulates parameter
    /// gradients and returns the input gradient.
    Tensor backward(const DenseCache& cache, const Tensor& upstream) {
        return backward_from_preact(cache, activation_grad(cache, upstream));
    }

    /// Backward when the caller already holds the gradient w.r.t. the
    /// pre-activation (the fused softmax + cross-entropy path).
    Tensor backward_from_preact(const DenseCache& cache, const Tensor& preact_grad) {
        const std::size_t n = in_dim();
        const std::size_t m = out_dim();
        Tensor input_grad({n});
        for (std::size_t j = 0; j < m; ++j) bias_.grad(j) += preact_grad(j);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = cache.input(i);
            const double* w_row = &weights_.value(i, 0);
            double* wg_row = &weights_.grad(i, 0);
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                wg_row[j] += x * preact_grad(j);
                acc += w_row[j] * preact_grad(j);
            }
            input_grad(i) = acc;
        }
        return input_grad;
    }

    Parameter& weights() { return weights_; }
    Parameter& bias() { return bias_; }
    const Parameter& weights() const { return weights_; }
    const Parameter& bias() const { return bias_; }

private:
    Tensor apply_activation(const Tensor& pre) const {
        switch (activation_) {
            case Activation::none:
                return pre;
            case Activation::relu: {
                Tensor out = pre;
                for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
                return out;
            }
            case Activation::softmax: {
                Tensor out = pre;
                double max_v = *std::max_element(out.data().begin(), out.data().end());
                double sum = 0.0;
                for (double& v : out.data()) {
                    v = std::exp(v - max_v);
                    sum += v;
                }
                for (double& v : out.data()) v /= sum;
                return out;
            }
        }
        throw ConfigError("unknown activation");
    }

    Tensor activation_grad(const DenseCache& cache, const Tensor& upstream) const {
        switch (activation_) {
            case Activation::none:
                return upstream;
            case Activation::relu: {
                Tensor g = upstream;
                for (std::size_t j = 0; j < g.size(); ++j) {
                    if (cache.preact(j) <= 0.0) g(j) = 0.0;
                }
                return g;
            }
            case Activation::softmax: {
                // dL/dz_i = y_i * (g_i - sum_j g_j y_j)
                const Tensor& y = cache.output;
                double dot = 0.0;
                for (std::size_t j = 0; j < y.size(); ++j) dot += upstream(j) * y(j);
                Tensor g({y.size()});
                for (std::size_t j = 0; j < y.size(); ++j) g(j) = y(j) * (upstream(j) - dot);
                return g;
            }
        }
        throw ConfigError("unknown activation");
    }

    Parameter weights_;
    Parameter bias_;
    Activation activation_ = Activation::none;
};

/// -ln(probabilities[gold]) for a softmax output.
inline double cross_entropy_loss(const Tensor& probabilities, std::size_t gold) {
    if (gold >= probabilities.size()) {
        throw ConfigError("cross_entropy_loss: gold class out of range");
    }
    return -std::log(probabilities[gold]);
}

/// Gradient of cross-entropy w.r.t. the softmax pre-activation: p - one_hot.
inline Tensor softmax_cross_entropy_grad(const Tensor& probabilities, std::size_t gold) {
    Tensor g = probabilities;
    g[gold] -= 1.0;
    return g;
}

inline Tensor concat(const std::vector<const Tensor*>& parts) {
    std::size_t total = 0;
    for (const Tensor* p : parts) total += p->size();
    Tensor out({total});
    std::size_t offset = 0;
    for (const Tensor* p : parts) {
        for (std::size_t i = 0; i < p->size(); ++i) out[offset + i] = (*p)[i];
        offset += p->size();
    }
    return out;
}

inline Tensor slice(const Tensor& v, std::size_t offset, std::size_t length) {
    Tensor out({length});
    for (std::size_t i = 0; i < length; ++i) out[i] = v[offset + i];
    return out;
}

}  // namespace dact
