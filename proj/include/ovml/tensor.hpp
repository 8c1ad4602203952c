#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ovml {

// Dense row-major tensor. Most of the library works with 2-D shapes
// (rows x cols); higher-rank data is kept as explicit row groups.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
        data_.assign(numel_of(dims_), T(0));
    }

    Tensor(int rows, int cols) : Tensor(std::vector<int>{rows, cols}) {}

    static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }

    static Tensor full(std::vector<int> dims, T value) {
        Tensor t(std::move(dims));
        for (auto& v : t.data_) v = value;
        return t;
    }

    static Tensor row(std::vector<T> values) {
        Tensor t(1, static_cast<int>(values.size()));
        t.data_ = std::move(values);
        return t;
    }

    const std::vector<int>& dims() const { return dims_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    int rows() const { return dims_.empty() ? 0 : dims_[0]; }
    int cols() const {
        if (dims_.size() < 2) return dims_.size() == 1 ? dims_[0] : 0;
        int c = 1;
        for (std::size_t i = 1; i < dims_.size(); ++i) c *= dims_[i];
        return c;
    }

    T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
    const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool bit_equal(const Tensor& other) const {
        return dims_ == other.dims_ && data_ == other.data_;
    }

    T squared_norm() const {
        T s = 0;
        for (const T& v : data_) s += v * v;
        return s;
    }

    static std::size_t numel_of(const std::vector<int>& dims) {
        std::size_t n = 1;
        for (int d : dims) {
            if (d < 0) throw std::invalid_argument("negative tensor dim");
            n *= static_cast<std::size_t>(d);
        }
        return dims.empty() ? 0 : n;
    }

private:
    std::vector<int> dims_;
    std::vector<T> data_;
};

// out(m x n) += a(m x k) @ b(k x n)
template <typename T>
void matmul_accumulate(const T* a, const T* b, T* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* orow = out + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out(m x n) += a(m x k) @ b(n x k)^T
template <typename T>
void matmul_nt_accumulate(const T* a, const T* b, T* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* orow = out + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<std::size_t>(j) * k;
            T acc = 0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] += acc;
        }
    }
}

// out(k x n) += a(m x k)^T @ b(m x n)
template <typename T>
void matmul_tn_accumulate(const T* a, const T* b, T* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        const T* brow = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            T* orow = out + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() != b.numel()) throw std::invalid_argument("dot: size mismatch");
    T s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace ovml
