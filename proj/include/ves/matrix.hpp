#pragma once

// Dense row-major matrix kernels: matmul, row normalization, stable
// log-softmax. Everything else in the library is built on these.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ves {

template <typename T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;  // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T(0))
        : rows(r), cols(c), data(r * c, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<T>> src) {
        Matrix m(src.size(), src.size() ? src.begin()->size() : 0);
        std::size_t i = 0;
        for (const auto& row : src) {
            if (row.size() != m.cols)
                throw std::invalid_argument("from_rows: ragged row lengths");
            std::copy(row.begin(), row.end(), m.data.begin() + i * m.cols);
            ++i;
        }
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    T* row_ptr(std::size_t i) { return data.data() + i * cols; }
    const T* row_ptr(std::size_t i) const { return data.data() + i * cols; }

    std::size_t size() const { return rows * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// Binary validity mask, one bit per token.
struct MaskVector {
    std::vector<std::uint8_t> bits;

    MaskVector() = default;
    explicit MaskVector(std::size_t n, std::uint8_t fill = 1) : bits(n, fill) {}
    MaskVector(std::initializer_list<int> src) {
        bits.reserve(src.size());
        for (int b : src) {
            if (b != 0 && b != 1)
                throw std::invalid_argument("MaskVector: entries must be 0 or 1");
            bits.push_back(static_cast<std::uint8_t>(b));
        }
    }

    std::size_t length() const { return bits.size(); }
    std::uint8_t operator[](std::size_t i) const { return bits[i]; }

    std::size_t popcount() const {
        std::size_t s = 0;
        for (auto b : bits) s += b;
        return s;
    }
};

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols != b.rows)
        throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                    a.shape_str() + " * " + b.shape_str());
    Matrix<T> c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* arow = a.row_ptr(i);
        T* crow = c.row_ptr(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const T aik = arow[k];
            if (aik == T(0)) continue;
            const T* brow = b.row_ptr(k);
            for (std::size_t j = 0; j < b.cols; ++j)
                crow[j] += aik * brow[j];
        }
    }
    return c;
}

// a * b^T without materializing the transpose.
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols != b.cols)
        throw std::invalid_argument("matmul_nt: inner dimensions disagree, " +
                                    a.shape_str() + " * " + b.shape_str() + "^T");
    Matrix<T> c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* arow = a.row_ptr(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const T* brow = b.row_ptr(j);
            T s = T(0);
            for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
            c(i, j) = s;
        }
    }
    return c;
}

// a^T * b.
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.rows != b.rows)
        throw std::invalid_argument("matmul_tn: inner dimensions disagree, " +
                                    a.shape_str() + "^T * " + b.shape_str());
    Matrix<T> c(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const T* arow = a.row_ptr(k);
        const T* brow = b.row_ptr(k);
        for (std::size_t i = 0; i < a.cols; ++i) {
            const T aki = arow[i];
            if (aki == T(0)) continue;
            T* crow = c.row_ptr(i);
            for (std::size_t j = 0; j < b.cols; ++j)
                crow[j] += aki * brow[j];
        }
    }
    return c;
}

template <typename T>
T row_norm(const Matrix<T>& x, std::size_t i) {
    T s = T(0);
    const T* row = x.row_ptr(i);
    for (std::size_t j = 0; j < x.cols; ++j) s += row[j] * row[j];
    return std::sqrt(s);
}

// Each row divided by max(norm, eps); zero rows pass through unchanged.
template <typename T>
Matrix<T> row_l2_normalize(const Matrix<T>& x, T eps) {
    if (!(eps > T(0)))
        throw std::invalid_argument("row_l2_normalize: eps must be positive");
    Matrix<T> out = x;
    for (std::size_t i = 0; i < x.rows; ++i) {
        const T inv = T(1) / std::max(row_norm(x, i), eps);
        T* row = out.row_ptr(i);
        for (std::size_t j = 0; j < x.cols; ++j) row[j] *= inv;
    }
    return out;
}

template <typename T>
T log_sum_exp(const T* v, std::size_t n) {
    T m = v[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, v[i]);
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

// Max-shifted log-softmax; exp of the result sums to 1 for any finite input.
template <typename T>
std::vector<T> log_softmax_row(const std::vector<T>& v) {
    if (v.empty())
        throw std::invalid_argument("log_softmax_row: empty input");
    const T lse = log_sum_exp(v.data(), v.size());
    std::vector<T> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
    return out;
}

}  // namespace ves
