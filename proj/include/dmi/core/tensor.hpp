#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmi {

// Dense row-major tensor. Rank is dynamic; most of the code uses
// (N, C, H, W) activations, (rows, cols) matrices or flat vectors.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) { resize(std::move(shape)); }

    Tensor(std::initializer_list<int> shape) { resize(std::vector<int>(shape)); }

    void resize(std::vector<int> shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        shape_ = std::move(shape);
        data_.assign(static_cast<size_t>(n), T(0));
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }

    int dim(int i) const {
        assert(i >= 0 && i < rank());
        return shape_[static_cast<size_t>(i)];
    }

    const std::vector<int>& shape() const { return shape_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // (n, c, h, w) accessor for rank-4 tensors
    T& at(int n, int c, int h, int w) {
        return data_[static_cast<size_t>(offset(n, c, h, w))];
    }
    const T& at(int n, int c, int h, int w) const {
        return data_[static_cast<size_t>(offset(n, c, h, w))];
    }

    int64_t offset(int n, int c, int h, int w) const {
        return ((int64_t(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void zero() { fill(T(0)); }

    // Reinterpret without touching storage; element count must match.
    void reshape_view(std::vector<int> shape) {
        int64_t n = 1;
        for (int d : shape) n *= d;
        if (n != numel()) throw std::invalid_argument("tensor: reshape element count mismatch");
        shape_ = std::move(shape);
    }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape_[i]);
        }
        return s + ")";
    }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <class T>
int64_t check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    return a.numel();
}

}  // namespace dmi
