#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segfuse/errors.hpp"

namespace segfuse {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape);

/// Dense row-major array. Activations use N,C,H,W order; convolution weights
/// use Cout,Cin,Kh,Kw. Gradients live beside the tensor (Parameter, tape
/// nodes), never inside it.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

    BasicTensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
        if (values_.size() != shape_size(shape_)) {
            throw ShapeError("tensor value count " + std::to_string(values_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }
    std::span<T> values() { return values_; }
    std::span<const T> values() const { return values_; }

    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    // 4-D accessors (N,C,H,W).
    T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return values_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return values_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

    /// Same values, new shape of equal element count.
    BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), values_); }

    template <typename U>
    BasicTensor<U> cast() const {
        return BasicTensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
    }

    bool operator==(const BasicTensor& other) const = default;

private:
    Shape shape_;
    std::vector<T> values_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Throws Error if any value is NaN or infinite.
template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what);

}  // namespace segfuse
