#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mstdim/error.hpp"

namespace mstdim {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// 64-byte aligned allocation. Vectorized kernels peel unaligned heads, which
/// changes summation order, so fixed alignment keeps results bitwise stable.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <class U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
        return true;
    }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array with an optional gradient buffer of the same shape.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), AlignedVector<T>(data)) {}

    Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}

    Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_)) {
            throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_str(shape_));
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    AlignedVector<T>& storage() noexcept { return data_; }
    const AlignedVector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    template <class... I>
    T& at(I... idx) {
        return data_[offset(idx...)];
    }
    template <class... I>
    const T& at(I... idx) const {
        return data_[offset(idx...)];
    }

    bool has_grad() const noexcept { return !grad_.empty(); }
    void enable_grad() {
        if (grad_.size() != data_.size()) grad_.assign(data_.size(), T{0});
    }
    void zero_grad() { std::fill(grad_.begin(), grad_.end(), T{0}); }
    std::span<T> grad() noexcept { return grad_; }
    std::span<const T> grad() const noexcept { return grad_; }

    /// Same data, new shape with the same element count.
    void reshape(Shape shape) {
        if (shape_numel(shape) != data_.size()) {
            throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        shape_ = std::move(shape);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Element-type conversion; gradients are not carried over.
    template <class U>
    Tensor<U> cast() const {
        AlignedVector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    template <class... I>
    std::size_t offset(I... idx) const {
        const std::size_t ix[] = {static_cast<std::size_t>(idx)...};
        std::size_t off = 0;
        for (std::size_t a = 0; a < sizeof...(I); ++a) off = off * shape_[a] + ix[a];
        return off;
    }

    Shape shape_;
    AlignedVector<T> data_;
    AlignedVector<T> grad_;
};

template <class T>
bool all_finite(std::span<const T> v) {
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

/// Throws NumericError naming `op` when any value is NaN/Inf.
template <class T>
void require_finite(std::span<const T> v, std::string_view op) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw NumericError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
        }
    }
}

template <class T>
void require_finite(const Tensor<T>& t, std::string_view op) {
    require_finite(t.values(), op);
}

/// A named, mutable view of every learnable tensor in a model.
template <class T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>*>>;

template <class T>
void zero_grads(const ParamList<T>& params) {
    for (auto& [name, t] : params) {
        t->enable_grad();
        t->zero_grad();
    }
}

template <class T>
std::size_t param_count(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t->size();
    return n;
}

/// FNV-1a over the raw parameter bytes; cheap equality check for "did this change".
template <class T>
std::uint64_t param_checksum(const ParamList<T>& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, t] : params) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t->data());
        for (std::size_t i = 0; i < t->size() * sizeof(T); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

}  // namespace mstdim
