#pragma once

// Projection heads (linear / LayerNorm / linear) and the audio temporal
// front-end: stride-2 average pooling of tokens and OR-pooling of masks.

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ves/aggregation.hpp"
#include "ves/matrix.hpp"

namespace ves {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kTauMax = 100.0;

template <typename T>
struct ProjectionHead {
    Matrix<T> w1;        // D_in x D_h
    Matrix<T> b1;        // 1 x D_h
    Matrix<T> ln_scale;  // 1 x D_h
    Matrix<T> ln_shift;  // 1 x D_h
    Matrix<T> w2;        // D_h x D_out
    Matrix<T> b2;        // 1 x D_out

    std::size_t in_dim() const { return w1.rows; }
    std::size_t hidden_dim() const { return w1.cols; }
    std::size_t out_dim() const { return w2.cols; }
};

// Uniform fan-in init for linears, identity affine for the norm.
template <typename T>
ProjectionHead<T> init_head(std::size_t d_in, std::size_t d_h, std::size_t d_out,
                            std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto fill = [&](Matrix<T>& m, std::size_t fan_in) {
        const T bound = T(1) / std::sqrt(T(fan_in));
        std::uniform_real_distribution<T> dist(-bound, bound);
        for (T& v : m.data) v = dist(rng);
    };
    ProjectionHead<T> h;
    h.w1 = Matrix<T>(d_in, d_h);
    h.b1 = Matrix<T>(1, d_h);
    h.ln_scale = Matrix<T>(1, d_h, T(1));
    h.ln_shift = Matrix<T>(1, d_h);
    h.w2 = Matrix<T>(d_h, d_out);
    h.b2 = Matrix<T>(1, d_out);
    fill(h.w1, d_in);
    fill(h.b1, d_in);
    fill(h.w2, d_h);
    fill(h.b2, d_h);
    return h;
}

template <typename T>
struct Model {
    ProjectionHead<T> audio_head;
    ProjectionHead<T> visual_head;
    Matrix<T> log_tau{1, 1};

    T tau() const { return std::exp(log_tau.data[0]); }

    void clamp_tau() {
        const T max_log = std::log(T(kTauMax));
        if (log_tau.data[0] > max_log) log_tau.data[0] = max_log;
    }

    // Stable name -> storage mapping; ordering is the checkpoint and
    // optimizer-state ordering.
    std::vector<std::pair<std::string, Matrix<T>*>> params() {
        return {
            {"audio_head.w1", &audio_head.w1},
            {"audio_head.b1", &audio_head.b1},
            {"audio_head.ln_scale", &audio_head.ln_scale},
            {"audio_head.ln_shift", &audio_head.ln_shift},
            {"audio_head.w2", &audio_head.w2},
            {"audio_head.b2", &audio_head.b2},
            {"visual_head.w1", &visual_head.w1},
            {"visual_head.b1", &visual_head.b1},
            {"visual_head.ln_scale", &visual_head.ln_scale},
            {"visual_head.ln_shift", &visual_head.ln_shift},
            {"visual_head.w2", &visual_head.w2},
            {"visual_head.b2", &visual_head.b2},
            {"log_tau", &log_tau},
        };
    }
};

template <typename T>
Model<T> init_model(std::size_t d_audio_in, std::size_t d_visual_in, std::size_t d_h,
                    std::size_t d_out, std::uint64_t seed, T initial_tau = T(10)) {
    Model<T> m;
    m.audio_head = init_head<T>(d_audio_in, d_h, d_out, seed * 2654435761u + 1);
    m.visual_head = init_head<T>(d_visual_in, d_h, d_out, seed * 2654435761u + 2);
    m.log_tau.data[0] = std::log(initial_tau);
    return m;
}

// Stride-2 average pooling over time; a trailing odd token is dropped.
template <typename T>
Matrix<T> downsample_audio(const Matrix<T>& tokens) {
    if (tokens.rows < 2)
        throw std::invalid_argument("downsample_audio: need at least 2 tokens, got " +
                                    std::to_string(tokens.rows));
    Matrix<T> out(tokens.rows / 2, tokens.cols);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j)
            out(i, j) = (tokens(2 * i, j) + tokens(2 * i + 1, j)) / T(2);
    return out;
}

// OR rule by default: a merged token is valid if either half was.
inline MaskVector downsample_mask(const MaskVector& m, bool and_rule = false) {
    if (m.length() < 2)
        throw std::invalid_argument("downsample_mask: need at least 2 entries, got " +
                                    std::to_string(m.length()));
    MaskVector out(m.length() / 2, 0);
    for (std::size_t i = 0; i < out.length(); ++i) {
        const int s = m[2 * i] + m[2 * i + 1];
        out.bits[i] = and_rule ? (s == 2) : (s >= 1);
    }
    return out;
}

namespace detail {
template <typename T>
Matrix<T> layer_norm_rows_plain(const Matrix<T>& x, const Matrix<T>& scale,
                                const Matrix<T>& shift, T eps) {
    Matrix<T> out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        T mu = T(0);
        for (std::size_t j = 0; j < x.cols; ++j) mu += x(i, j);
        mu /= T(x.cols);
        T var = T(0);
        for (std::size_t j = 0; j < x.cols; ++j) {
            const T d = x(i, j) - mu;
            var += d * d;
        }
        var /= T(x.cols);
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < x.cols; ++j)
            out(i, j) = (x(i, j) - mu) * inv * scale(0, j) + shift(0, j);
    }
    return out;
}

template <typename T>
Matrix<T> add_row_vector_plain(Matrix<T> x, const Matrix<T>& bias) {
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) x(i, j) += bias(0, j);
    return x;
}
}  // namespace detail

// Inference-path projection; the training path runs the same formulas on
// the tape.
template <typename T>
Matrix<T> project(const Matrix<T>& tokens, const ProjectionHead<T>& head) {
    if (tokens.cols != head.in_dim())
        throw std::invalid_argument("project: token dim " + std::to_string(tokens.cols) +
                                    " != head input dim " + std::to_string(head.in_dim()));
    Matrix<T> h = detail::add_row_vector_plain(matmul(tokens, head.w1), head.b1);
    h = detail::layer_norm_rows_plain(h, head.ln_scale, head.ln_shift, T(kLayerNormEps));
    return detail::add_row_vector_plain(matmul(h, head.w2), head.b2);
}

// Full per-sample encode: project and l2-normalize rows.
template <typename T>
TokenSet<T> encode_tokens(const Matrix<T>& tokens, const ProjectionHead<T>& head,
                          std::optional<MaskVector> mask, T eps) {
    TokenSet<T> out;
    out.tokens = row_l2_normalize(project(tokens, head), eps);
    out.mask = std::move(mask);
    out.normalized = true;
    out.validate();
    return out;
}

}  // namespace ves
