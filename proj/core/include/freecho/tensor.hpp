#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "freecho/rng.hpp"

namespace freecho {

// Dense row-major double tensor. Shapes are small (<= 5 dims in practice);
// all numeric kernels operate on raw data() spans.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), 0.0);
    }
    Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), fill);
    }
    Tensor(std::vector<int> shape, std::vector<double> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        if (static_cast<int64_t>(data_.size()) != count(shape_))
            throw std::invalid_argument("Tensor: value count does not match shape");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }
    static Tensor randn(std::vector<int> shape, Rng& rng, double std = 1.0) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = std * rng.normal();
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    // Reinterpret shape; element count must match.
    Tensor reshaped(std::vector<int> shape) const {
        if (count(shape) != numel())
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_  = data_;
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    static std::string shape_str(const std::vector<int>& shape) {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                    Tensor::shape_str(a.shape()) + " vs " +
                                    Tensor::shape_str(b.shape()));
}

}  // namespace freecho
