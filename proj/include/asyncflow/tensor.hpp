#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "asyncflow/error.hpp"

namespace asyncflow {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

std::string shape_str(const Shape& shape);

/// Dense row-major tensor. Scalars are rank-0 (empty shape, one element).
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() : data_(1, T(0)) {}

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
        check_extents();
    }

    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        ASYNCFLOW_EXPECT(data_.size() == shape_size(shape_),
                         "tensor data length does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    static Tensor from(std::initializer_list<T> values) {
        return Tensor(Shape{values.size()}, std::vector<T>(values));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    /// Extent of axis `axis`; negative values count from the back.
    std::size_t dim(int axis) const {
        const int r = static_cast<int>(shape_.size());
        const int a = axis < 0 ? axis + r : axis;
        ASYNCFLOW_EXPECT(a >= 0 && a < r, "axis out of range");
        return shape_[static_cast<std::size_t>(a)];
    }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }

    T item() const {
        ASYNCFLOW_EXPECT(data_.size() == 1, "item() requires a single-element tensor");
        return data_[0];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(),
                           [](T v) { return std::isfinite(v); });
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const {
        ASYNCFLOW_EXPECT(shape_size(shape) == data_.size(),
                         "reshape " + shape_str(shape_) + " -> " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(),
                       [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor& other) const = default;

private:
    void check_extents() const {
        for (auto e : shape_)
            ASYNCFLOW_EXPECT(e > 0, "tensor extents must be positive: " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

/// Throws NumericError naming `what` if any entry is NaN or Inf.
template <class T>
void check_finite(const Tensor<T>& t, const std::string& what) {
    if (!t.all_finite()) throw NumericError("non-finite values in " + what);
}

}  // namespace asyncflow
