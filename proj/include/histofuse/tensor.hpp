#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"

namespace histofuse {

/// Dense shape-tagged array, row-major, the unit of all numeric computation.
/// Scalar type is a template parameter: production code runs float, gradient
/// oracles run double.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_numel(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
    }

    static Tensor full(std::vector<std::size_t> shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Reinterpret under a new shape with identical element count.
    Tensor reshaped(std::vector<std::size_t> shape) const {
        if (checked_numel(shape) != data_.size())
            throw ShapeError("reshape to " + shape_string(shape) + " changes element count");
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const {
        for (const T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    /// Convert between scalar types (float <-> double), same shape.
    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    static std::string shape_string(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
        os << "]";
        return os.str();
    }

    std::string shape_string() const { return shape_string(shape_); }

    /// Tensors participating in autodiff as trainable leaves set this.
    bool requires_grad = false;

private:
    static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
        // zero extents are tolerated so an empty vector can act as the
        // concat identity; the documented ops all require positive extents
        std::size_t n = 1;
        for (const std::size_t e : shape) n *= e;
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// View of a rank-3 [H,W,C] or rank-4 [N,H,W,C] tensor as a batch of images.
struct SpatialDims {
    std::size_t n, h, w, c;
    bool batched;
};

template <typename T>
inline SpatialDims spatial_dims(const Tensor<T>& t, const char* what) {
    const auto& s = t.shape();
    if (s.size() == 3) return {1, s[0], s[1], s[2], false};
    if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
    throw ShapeError(std::string(what) + ": expected [H,W,C] or [N,H,W,C], got " +
                     Tensor<T>::shape_string(s));
}

/// View of a rank-1 [F] or rank-2 [N,F] tensor as a batch of feature rows.
struct RowDims {
    std::size_t n, f;
    bool batched;
};

template <typename T>
inline RowDims row_dims(const Tensor<T>& t, const char* what) {
    const auto& s = t.shape();
    if (s.size() == 1) return {1, s[0], false};
    if (s.size() == 2) return {s[0], s[1], true};
    throw ShapeError(std::string(what) + ": expected [F] or [N,F], got " +
                     Tensor<T>::shape_string(s));
}

}  // namespace histofuse
