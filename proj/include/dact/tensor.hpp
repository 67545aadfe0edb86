// Dense double-precision tensors, trainable parameters, and the seeded
// random number generator that drives every stochastic choice in the toolkit.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dact {

// Configuration mistakes: shape mismatches, bad config files, invalid flags.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data: corpus files, manifests, embedding files, checkpoints.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during a run (non-finite loss or gradient).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense n-dimensional array of 64-bit floats in row-major order.
/// The sole numeric carrier; shapes up to rank 3 are used in practice.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != data_.size()) {
            throw ConfigError("tensor data length does not match shape");
        }
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i) {
        assert(rank() == 1 && i < shape_[0]);
        return data_[i];
    }
    const double& operator()(std::size_t i) const {
        assert(rank() == 1 && i < shape_[0]);
        return data_[i];
    }
    double& operator()(std::size_t i, std::size_t j) {
        assert(rank() == 2 && i < shape_[0] && j < shape_[1]);
        return data_[i * shape_[1] + j];
    }
    const double& operator()(std::size_t i, std::size_t j) const {
        assert(rank() == 2 && i < shape_[0] && j < shape_[1]);
        return data_[i * shape_[1] + j];
    }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        assert(rank() == 3 && i < shape_[0] && j < shape_[1] && k < shape_[2]);
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    const double& operator()(std::size_t i, std::size_t j, std::size_t k) const {
        assert(rank() == 3 && i < shape_[0] && j < shape_[1] && k < shape_[2]);
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(),
                           [](double v) { return std::isfinite(v); });
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw ConfigError("tensor dimensions must be positive");
            n *= d;
        }
        return shape.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// A value tensor paired with its gradient accumulator. Non-trainable
/// parameters are never touched by the optimizer and never accumulate
/// gradients.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string name_, Tensor value_, bool trainable_ = true)
        : name(std::move(name_)),
          value(std::move(value_)),
          grad(Tensor::zeros(value.shape())),
          trainable(trainable_) {}

    void zero_grad() { grad.fill(0.0); }
};

/// Deterministic pseudo-random generator: splitmix64.
/// One step: state += 0x9E3779B97F4A7C15; output = scrambled state.
/// Identical seed (and stream) yields an identical draw sequence on every
/// platform; all randomness in the toolkit flows through this type.
class SeededRng {
public:
    // Independent, documented streams derived from one run seed.
    enum Stream : std::uint64_t {
        kInit = 0,        // parameter initialization
        kShuffle = 1,     // mini-batch order
        kEmbeddings = 2,  // rows missing from a pretrained embedding file
        kDropout = 3,     // dropout masks
        kTestData = 100,  // reserved for test-side generators
    };

    explicit SeededRng(std::uint64_t seed, std::uint64_t stream = kInit)
        : state_(seed ^ (0xBF58476D1CE4E5B9ULL * (stream + 1))) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform integer in [0, n). Modulo bias is below 2^-32 for any n that
    /// fits in memory here; determinism is what matters.
    std::uint64_t next_below(std::uint64_t n) {
        assert(n > 0);
        return next_u64() % n;
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
};

inline std::size_t argmax_lowest(const Tensor& v) {
    assert(v.size() > 0);
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

}  // namespace dact
