#pragma once

// Shared helpers for the test suites: seeded random inputs and the naive
// loop oracles the implementations are checked against.

#include <random>
#include <vector>

#include "ves/aggregation.hpp"
#include "ves/matrix.hpp"

namespace test_util {

template <typename T>
ves::Matrix<T> random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                             T lo = T(-1), T hi = T(1)) {
    std::uniform_real_distribution<T> dist(lo, hi);
    ves::Matrix<T> m(rows, cols);
    for (T& v : m.data) v = dist(rng);
    return m;
}

inline ves::MaskVector random_mask(std::size_t n, std::mt19937_64& rng,
                                   double one_prob = 0.7) {
    std::bernoulli_distribution dist(one_prob);
    ves::MaskVector m(n, 0);
    for (auto& b : m.bits) b = dist(rng);
    return m;
}

// Naive triple-loop product.
template <typename T>
ves::Matrix<T> matmul_oracle(const ves::Matrix<T>& a, const ves::Matrix<T>& b) {
    ves::Matrix<T> c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            T s = T(0);
            for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

// Row-max + masked-mean, written independently of the library path.
template <typename T>
T phi_oracle(const ves::Matrix<T>& s, const ves::MaskVector& m, T eps) {
    T num = T(0), den = eps;
    for (std::size_t t = 0; t < s.rows; ++t) {
        if (!m[t]) continue;
        T best = s(t, 0);
        for (std::size_t p = 1; p < s.cols; ++p) best = std::max(best, s(t, p));
        num += best;
        den += T(1);
    }
    return num / den;
}

template <typename T>
T psi_oracle(const ves::Matrix<T>& s) {
    T sum = T(0);
    for (std::size_t p = 0; p < s.cols; ++p) {
        T best = s(0, p);
        for (std::size_t t = 1; t < s.rows; ++t) best = std::max(best, s(t, p));
        sum += best;
    }
    return sum / T(s.cols);
}

template <typename T>
std::vector<T> pool_audio_oracle(const ves::Matrix<T>& a, const ves::MaskVector& m, T eps) {
    std::vector<T> out(a.cols, T(0));
    T den = eps;
    for (std::size_t t = 0; t < a.rows; ++t) {
        if (!m[t]) continue;
        den += T(1);
        for (std::size_t j = 0; j < a.cols; ++j) out[j] += a(t, j);
    }
    for (T& v : out) v /= den;
    return out;
}

template <typename T>
std::vector<T> pool_visual_oracle(const ves::Matrix<T>& v) {
    std::vector<T> out(v.cols, T(0));
    for (std::size_t p = 0; p < v.rows; ++p)
        for (std::size_t j = 0; j < v.cols; ++j) out[j] += v(p, j);
    for (T& x : out) x /= T(v.rows);
    return out;
}

// Direct-summation symmetric InfoNCE without max-shifting tricks.
template <typename T>
T infonce_oracle(const ves::Matrix<T>& c, T tau) {
    const std::size_t B = c.rows;
    T loss = T(0);
    for (std::size_t b = 0; b < B; ++b) {
        T row_den = T(0), col_den = T(0);
        for (std::size_t k = 0; k < B; ++k) {
            row_den += std::exp(tau * c(b, k));
            col_den += std::exp(tau * c(k, b));
        }
        loss -= std::log(std::exp(tau * c(b, b)) / row_den);
        loss -= std::log(std::exp(tau * c(b, b)) / col_den);
    }
    return loss / T(2 * B);
}

}  // namespace test_util
