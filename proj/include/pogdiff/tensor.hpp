#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pogdiff/errors.hpp"

namespace pogdiff {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major tensor of doubles. Rank 0 is a scalar.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
        detail::require_shape(shape_size(shape_) == values_.size(),
                              "tensor: shape " + shape_str(shape_) + " does not match " +
                                  std::to_string(values_.size()) + " values");
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    static Tensor vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor(Shape{n}, std::move(v));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
        return Tensor(Shape{rows, cols}, std::move(v));
    }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    std::size_t rows() const {
        detail::require_shape(rank() == 2, "tensor: rows() on rank-" + std::to_string(rank()));
        return shape_[0];
    }
    std::size_t cols() const {
        detail::require_shape(rank() == 2, "tensor: cols() on rank-" + std::to_string(rank()));
        return shape_[1];
    }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::vector<double>& data() { return values_; }
    const std::vector<double>& data() const { return values_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

    double item() const {
        detail::require_shape(values_.size() == 1, "tensor: item() on non-scalar " + shape_str(shape_));
        return values_[0];
    }

    std::span<const double> row(std::size_t r) const {
        const std::size_t c = cols();
        return std::span<const double>(values_).subspan(r * c, c);
    }
    std::span<double> row(std::size_t r) {
        const std::size_t c = cols();
        return std::span<double>(values_).subspan(r * c, c);
    }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

/// Named parameter tensors. Ordered so iteration (and hence every update) is deterministic.
using ParameterSet = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

inline double dot(std::span<const double> a, std::span<const double> b) {
    detail::require_shape(a.size() == b.size(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    detail::require_shape(a.size() == b.size(), "squared_distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    const double na = std::sqrt(squared_norm(a));
    const double nb = std::sqrt(squared_norm(b));
    detail::require(na > 0.0 && nb > 0.0, "cosine_similarity: zero-norm vector");
    return dot(a, b) / (na * nb);
}

/// Stack equal-length rows into an [n, d] matrix.
inline Tensor stack_rows(const std::vector<std::vector<double>>& rows) {
    detail::require_shape(!rows.empty(), "stack_rows: no rows");
    const std::size_t d = rows.front().size();
    std::vector<double> values;
    values.reserve(rows.size() * d);
    for (const auto& r : rows) {
        detail::require_shape(r.size() == d, "stack_rows: ragged rows");
        values.insert(values.end(), r.begin(), r.end());
    }
    return Tensor::matrix(rows.size(), d, std::move(values));
}

}  // namespace pogdiff
