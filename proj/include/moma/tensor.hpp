#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "moma/errors.hpp"
#include "moma/rng.hpp"

namespace moma {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// Dense n-dimensional tensor handle. Copies share storage, so a parameter
// updated in place (or a gradient accumulated by backward) is visible through
// every handle. S is float for training, double for gradient verification.
template <typename S>
class TensorT {
public:
    using Scalar = S;

    TensorT() = default;

    TensorT(Shape shape, std::vector<S> data) : shape_(std::move(shape)) {
        if (numel_of(shape_) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor init: " + shape_str(shape_) + " needs " +
                             std::to_string(numel_of(shape_)) + " values, got " +
                             std::to_string(data.size()));
        storage_ = std::make_shared<Storage>();
        storage_->value = std::move(data);
    }

    static TensorT zeros(Shape shape) { return full(std::move(shape), S(0)); }
    static TensorT ones(Shape shape) { return full(std::move(shape), S(1)); }

    static TensorT full(Shape shape, S value) {
        const int64_t n = numel_of(shape);
        return TensorT(std::move(shape), std::vector<S>(static_cast<size_t>(n), value));
    }

    static TensorT scalar(S value) { return TensorT(Shape{}, std::vector<S>{value}); }

    static TensorT randn(Shape shape, Rng& rng) {
        const int64_t n = numel_of(shape);
        std::vector<S> v(static_cast<size_t>(n));
        for (auto& x : v) x = static_cast<S>(rng.normal());
        return TensorT(std::move(shape), std::move(v));
    }

    static TensorT uniform(Shape shape, S lo, S hi, Rng& rng) {
        const int64_t n = numel_of(shape);
        std::vector<S> v(static_cast<size_t>(n));
        for (auto& x : v) x = static_cast<S>(rng.uniform(lo, hi));
        return TensorT(std::move(shape), std::move(v));
    }

    static TensorT trunc_normal(Shape shape, double std_dev, Rng& rng) {
        const int64_t n = numel_of(shape);
        std::vector<S> v(static_cast<size_t>(n));
        for (auto& x : v) x = static_cast<S>(rng.trunc_normal(std_dev));
        return TensorT(std::move(shape), std::move(v));
    }

    bool defined() const { return storage_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i >= 0 ? i : rank() + i)]; }
    int64_t numel() const { return storage_ ? static_cast<int64_t>(storage_->value.size()) : 0; }

    std::span<const S> data() const { return {storage_->value.data(), storage_->value.size()}; }
    std::span<S> mutable_data() { return {storage_->value.data(), storage_->value.size()}; }

    S item() const {
        if (numel() != 1) throw ShapeError("item() on tensor " + shape_str(shape_));
        return storage_->value[0];
    }

    S at(std::initializer_list<int64_t> idx) const {
        return storage_->value[static_cast<size_t>(flat_index(idx))];
    }

    TensorT& set_requires_grad(bool v) {
        requires_grad_ = v;
        return *this;
    }
    bool requires_grad() const { return requires_grad_; }

    bool has_grad() const { return storage_ && !storage_->grad.empty(); }
    std::span<const S> grad() const {
        if (!has_grad()) throw ValueError("grad accessed before backward populated it");
        return {storage_->grad.data(), storage_->grad.size()};
    }

    // Allocates (zero-filled) on first call. Autograd accumulates through this.
    std::vector<S>& grad_buffer() {
        if (storage_->grad.empty()) storage_->grad.assign(storage_->value.size(), S(0));
        return storage_->grad;
    }

    void zero_grad() {
        if (storage_) storage_->grad.clear();
    }

    // Same storage, no gradient flow.
    TensorT detach() const {
        TensorT t;
        t.shape_ = shape_;
        t.storage_ = storage_;
        return t;
    }

    TensorT clone() const {
        TensorT t;
        t.shape_ = shape_;
        t.storage_ = std::make_shared<Storage>();
        t.storage_->value = storage_->value;
        t.requires_grad_ = requires_grad_;
        return t;
    }

    TensorT reshaped(Shape shape) const {
        if (numel_of(shape) != numel())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
        TensorT t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    bool same_storage(const TensorT& other) const { return storage_ == other.storage_; }

    // Tape linkage; managed by moma::ops and GraphT.
    int64_t graph_node() const { return node_; }
    uint64_t graph_epoch() const { return epoch_; }
    void set_graph_node(int64_t node, uint64_t epoch) {
        node_ = node;
        epoch_ = epoch;
    }

private:
    struct Storage {
        std::vector<S> value;
        std::vector<S> grad;  // empty until backward touches a tracked leaf
    };

    int64_t flat_index(std::initializer_list<int64_t> idx) const {
        if (static_cast<int64_t>(idx.size()) != rank())
            throw ShapeError("index rank mismatch for " + shape_str(shape_));
        int64_t flat = 0;
        size_t k = 0;
        for (int64_t i : idx) {
            flat = flat * shape_[k] + i;
            ++k;
        }
        return flat;
    }

    Shape shape_;
    std::shared_ptr<Storage> storage_;
    bool requires_grad_ = false;
    int64_t node_ = -1;
    uint64_t epoch_ = 0;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename To, typename From>
TensorT<To> cast(const TensorT<From>& t) {
    std::vector<To> v(t.data().begin(), t.data().end());
    return TensorT<To>(t.shape(), std::move(v));
}

}  // namespace moma
