#pragma once

// Token-level similarity volumes and the clip-level aggregation functions:
// dense max-mean (audio->visual), its patch-wise mirror, and global pooling.

#include <optional>
#include <vector>

#include "ves/matrix.hpp"

namespace ves {

template <typename T>
struct TokenSet {
    Matrix<T> tokens;              // N x D
    std::optional<MaskVector> mask;  // audio only
    bool normalized = false;

    std::size_t count() const { return tokens.rows; }
    std::size_t dim() const { return tokens.cols; }

    void validate() const {
        if (mask && mask->length() != tokens.rows)
            throw std::invalid_argument("TokenSet: mask length " +
                                        std::to_string(mask->length()) +
                                        " != token count " + std::to_string(tokens.rows));
    }
};

template <typename T>
struct SimilarityVolume {
    Matrix<T> values;  // N_a x N_v
    std::size_t audio_index = 0;
    std::size_t visual_index = 0;
};

enum class ClipSimilarityKind { dense, global, dense_sym };

template <typename T>
struct ClipSimilarityMatrix {
    Matrix<T> values;  // B x B, rows index audio samples
    ClipSimilarityKind kind = ClipSimilarityKind::dense;
};

template <typename T>
SimilarityVolume<T> similarity_volume(const TokenSet<T>& audio, const TokenSet<T>& visual) {
    if (audio.dim() != visual.dim())
        throw std::invalid_argument("similarity_volume: embedding dims disagree, " +
                                    std::to_string(audio.dim()) + " vs " +
                                    std::to_string(visual.dim()));
    return {matmul_nt(audio.tokens, visual.tokens), 0, 0};
}

// Row max with lowest-index tie-break; shared by phi and the gradient path.
template <typename T>
std::size_t row_argmax(const Matrix<T>& m, std::size_t row) {
    const T* r = m.row_ptr(row);
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.cols; ++j)
        if (r[j] > r[best]) best = j;
    return best;
}

template <typename T>
std::size_t col_argmax(const Matrix<T>& m, std::size_t col) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < m.rows; ++i)
        if (m(i, col) > m(best, col)) best = i;
    return best;
}

// Masked mean over time of the per-token max over patches.
template <typename T>
T phi(const SimilarityVolume<T>& s, const MaskVector& m, T eps) {
    if (m.length() != s.values.rows)
        throw std::invalid_argument("phi: mask length != audio token count");
    if (!(eps > T(0)))
        throw std::invalid_argument("phi: eps must be positive");
    T num = T(0), den = eps;
    for (std::size_t t = 0; t < s.values.rows; ++t) {
        if (!m[t]) continue;
        num += s.values(t, row_argmax(s.values, t));
        den += T(1);
    }
    return num / den;
}

// Mean over patches of the per-patch max over time.
template <typename T>
T psi(const SimilarityVolume<T>& s) {
    if (s.values.rows == 0 || s.values.cols == 0)
        throw std::invalid_argument("psi: empty similarity volume");
    T sum = T(0);
    for (std::size_t p = 0; p < s.values.cols; ++p)
        sum += s.values(col_argmax(s.values, p), p);
    return sum / T(s.values.cols);
}

template <typename T>
std::vector<T> global_pool_audio(const TokenSet<T>& audio, T eps) {
    if (!audio.mask)
        throw std::invalid_argument("global_pool_audio: mask required");
    audio.validate();
    std::vector<T> out(audio.dim(), T(0));
    T den = eps;
    for (std::size_t t = 0; t < audio.count(); ++t) {
        if (!(*audio.mask)[t]) continue;
        const T* row = audio.tokens.row_ptr(t);
        for (std::size_t j = 0; j < audio.dim(); ++j) out[j] += row[j];
        den += T(1);
    }
    for (T& v : out) v /= den;
    return out;
}

template <typename T>
std::vector<T> global_pool_visual(const TokenSet<T>& visual) {
    if (visual.count() == 0)
        throw std::invalid_argument("global_pool_visual: empty token set");
    std::vector<T> out(visual.dim(), T(0));
    for (std::size_t p = 0; p < visual.count(); ++p) {
        const T* row = visual.tokens.row_ptr(p);
        for (std::size_t j = 0; j < visual.dim(); ++j) out[j] += row[j];
    }
    for (T& v : out) v /= T(visual.count());
    return out;
}

namespace detail {
template <typename T>
void check_batch_lengths(const std::vector<TokenSet<T>>& a,
                         const std::vector<TokenSet<T>>& v, const char* who) {
    if (a.size() != v.size() || a.empty())
        throw std::invalid_argument(std::string(who) + ": batch lengths disagree or empty, " +
                                    std::to_string(a.size()) + " vs " + std::to_string(v.size()));
}
}  // namespace detail

template <typename T>
ClipSimilarityMatrix<T> clip_matrix_dense(const std::vector<TokenSet<T>>& batch_audio,
                                          const std::vector<TokenSet<T>>& batch_visual,
                                          T eps) {
    detail::check_batch_lengths(batch_audio, batch_visual, "clip_matrix_dense");
    const std::size_t B = batch_audio.size();
    ClipSimilarityMatrix<T> c{Matrix<T>(B, B), ClipSimilarityKind::dense};
    for (std::size_t b = 0; b < B; ++b) {
        if (!batch_audio[b].mask)
            throw std::invalid_argument("clip_matrix_dense: audio sample " +
                                        std::to_string(b) + " lacks a mask");
        for (std::size_t b2 = 0; b2 < B; ++b2) {
            auto s = similarity_volume(batch_audio[b], batch_visual[b2]);
            c.values(b, b2) = phi(s, *batch_audio[b].mask, eps);
        }
    }
    return c;
}

// FILIP-style symmetric variant: (phi + psi) / 2. Used by the ablation only.
template <typename T>
ClipSimilarityMatrix<T> clip_matrix_dense_sym(const std::vector<TokenSet<T>>& batch_audio,
                                              const std::vector<TokenSet<T>>& batch_visual,
                                              T eps) {
    detail::check_batch_lengths(batch_audio, batch_visual, "clip_matrix_dense_sym");
    const std::size_t B = batch_audio.size();
    ClipSimilarityMatrix<T> c{Matrix<T>(B, B), ClipSimilarityKind::dense_sym};
    for (std::size_t b = 0; b < B; ++b) {
        if (!batch_audio[b].mask)
            throw std::invalid_argument("clip_matrix_dense_sym: audio sample " +
                                        std::to_string(b) + " lacks a mask");
        for (std::size_t b2 = 0; b2 < B; ++b2) {
            auto s = similarity_volume(batch_audio[b], batch_visual[b2]);
            c.values(b, b2) =
                (phi(s, *batch_audio[b].mask, eps) + psi(s)) / T(2);
        }
    }
    return c;
}

template <typename T>
ClipSimilarityMatrix<T> clip_matrix_global(const std::vector<TokenSet<T>>& batch_audio,
                                           const std::vector<TokenSet<T>>& batch_visual,
                                           T eps, bool renormalize = true) {
    detail::check_batch_lengths(batch_audio, batch_visual, "clip_matrix_global");
    const std::size_t B = batch_audio.size();
    std::vector<std::vector<T>> abar(B), vbar(B);
    for (std::size_t b = 0; b < B; ++b) {
        abar[b] = global_pool_audio(batch_audio[b], eps);
        vbar[b] = global_pool_visual(batch_visual[b]);
        if (renormalize) {
            for (auto* vec : {&abar[b], &vbar[b]}) {
                T n = T(0);
                for (T x : *vec) n += x * x;
                n = std::max(std::sqrt(n), eps);
                for (T& x : *vec) x /= n;
            }
        }
    }
    ClipSimilarityMatrix<T> c{Matrix<T>(B, B), ClipSimilarityKind::global};
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t b2 = 0; b2 < B; ++b2) {
            T s = T(0);
            for (std::size_t j = 0; j < abar[b].size(); ++j) s += abar[b][j] * vbar[b2][j];
            c.values(b, b2) = s;
        }
    return c;
}

}  // namespace ves
