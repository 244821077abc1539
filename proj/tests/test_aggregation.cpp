#include "catch_amalgamated.hpp"

#include <algorithm>
#include <random>

#include "ves/aggregation.hpp"
#include "test_util.hpp"

using ves::Matrix;
using ves::MaskVector;
using ves::TokenSet;

namespace {

constexpr double kEps = 1e-6;

TokenSet<double> make_set(Matrix<double> tokens, std::optional<MaskVector> mask = std::nullopt) {
    TokenSet<double> s;
    s.tokens = std::move(tokens);
    s.mask = std::move(mask);
    return s;
}

TokenSet<double> random_normalized_set(std::size_t n, std::size_t d, std::mt19937_64& rng,
                                       bool with_mask) {
    TokenSet<double> s;
    s.tokens = ves::row_l2_normalize(test_util::random_matrix<double>(n, d, rng), kEps);
    if (with_mask) s.mask = test_util::random_mask(n, rng);
    s.normalized = true;
    return s;
}

}  // namespace

TEST_CASE("similarity_volume orthonormal identity") {
    auto tokens = Matrix<double>::identity(3);
    auto a = make_set(tokens), v = make_set(tokens);
    auto s = ves::similarity_volume(a, v);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(s.values(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("similarity_volume scalar case") {
    auto s = ves::similarity_volume(make_set(Matrix<double>::from_rows({{2}})),
                                    make_set(Matrix<double>::from_rows({{3}})));
    CHECK(s.values(0, 0) == 6.0);
}

TEST_CASE("similarity_volume matches dot-product oracle") {
    std::mt19937_64 rng(21);
    auto a = random_normalized_set(3, 4, rng, false);
    auto v = random_normalized_set(5, 4, rng, false);
    auto s = ves::similarity_volume(a, v);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double dot = 0;
            for (std::size_t k = 0; k < 4; ++k) dot += a.tokens(i, k) * v.tokens(j, k);
            CHECK(s.values(i, j) == dot);
            CHECK(s.values(i, j) >= -1.0 - 1e-6);
            CHECK(s.values(i, j) <= 1.0 + 1e-6);
        }
}

TEST_CASE("similarity_volume rejects dim mismatch") {
    CHECK_THROWS_AS(ves::similarity_volume(make_set(Matrix<double>(2, 3)),
                                           make_set(Matrix<double>(2, 4))),
                    std::invalid_argument);
}

TEST_CASE("phi constant volume") {
    const std::size_t T = 4;
    const double c = 0.37;
    ves::SimilarityVolume<double> s{Matrix<double>(T, 5, c), 0, 0};
    CHECK(ves::phi(s, MaskVector(T, 1), kEps) ==
          Catch::Approx(c * double(T) / (double(T) + kEps)).margin(1e-15));
}

TEST_CASE("phi all-zero mask") {
    ves::SimilarityVolume<double> s{Matrix<double>(3, 4, 0.9), 0, 0};
    CHECK(ves::phi(s, MaskVector(3, 0), kEps) == 0.0);
}

TEST_CASE("phi hand example") {
    ves::SimilarityVolume<double> s{
        Matrix<double>::from_rows({{0.1, 0.5, -0.2}, {0.9, 0.0, 0.3}}), 0, 0};
    CHECK(ves::phi(s, MaskVector({1, 1}), kEps) ==
          Catch::Approx((0.5 + 0.9) / (2.0 + kEps)).margin(1e-15));
}

TEST_CASE("phi matches loop oracle") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        auto m = test_util::random_matrix<double>(1 + trial % 6, 1 + trial % 5, rng);
        ves::SimilarityVolume<double> s{m, 0, 0};
        auto mask = test_util::random_mask(m.rows, rng);
        CHECK(ves::phi(s, mask, kEps) == test_util::phi_oracle(m, mask, kEps));
    }
}

TEST_CASE("phi invariant to visual patch permutation") {
    std::mt19937_64 rng(32);
    auto m = test_util::random_matrix<double>(4, 6, rng);
    auto mask = test_util::random_mask(4, rng);
    ves::SimilarityVolume<double> s{m, 0, 0};
    const double base = ves::phi(s, mask, kEps);
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Matrix<double> pm(4, 6);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) pm(i, j) = m(i, perm[j]);
    ves::SimilarityVolume<double> ps{pm, 0, 0};
    CHECK(ves::phi(ps, mask, kEps) == base);
}

TEST_CASE("phi invariant to appending masked tokens") {
    std::mt19937_64 rng(33);
    auto m = test_util::random_matrix<double>(3, 4, rng);
    MaskVector mask(3, 1);
    ves::SimilarityVolume<double> s{m, 0, 0};
    const double base = ves::phi(s, mask, kEps);

    Matrix<double> ext(5, 4);
    std::copy(m.data.begin(), m.data.end(), ext.data.begin());
    for (std::size_t i = 12; i < 20; ++i) ext.data[i] = 99.0;
    MaskVector ext_mask({1, 1, 1, 0, 0});
    ves::SimilarityVolume<double> es{ext, 0, 0};
    CHECK(ves::phi(es, ext_mask, kEps) == base);
}

TEST_CASE("phi bound for normalized inputs") {
    std::mt19937_64 rng(34);
    auto a = random_normalized_set(5, 6, rng, false);
    auto v = random_normalized_set(7, 6, rng, false);
    auto s = ves::similarity_volume(a, v);
    const double val = ves::phi(s, MaskVector(5, 1), kEps);
    CHECK(std::abs(val) <= 5.0 / (5.0 + kEps) + 1e-12);
}

TEST_CASE("psi constant volume") {
    ves::SimilarityVolume<double> s{Matrix<double>(3, 4, 0.42), 0, 0};
    CHECK(ves::psi(s) == Catch::Approx(0.42).margin(1e-15));
}

TEST_CASE("psi hand example") {
    ves::SimilarityVolume<double> s{
        Matrix<double>::from_rows({{0.1, 0.5, -0.2}, {0.9, 0.0, 0.3}}), 0, 0};
    CHECK(ves::psi(s) == Catch::Approx((0.9 + 0.5 + 0.3) / 3.0).margin(1e-15));
}

TEST_CASE("psi single row is the row mean") {
    ves::SimilarityVolume<double> s{Matrix<double>::from_rows({{0.2, -0.4, 0.8}}), 0, 0};
    CHECK(ves::psi(s) == Catch::Approx((0.2 - 0.4 + 0.8) / 3.0).margin(1e-15));
}

TEST_CASE("psi matches loop oracle and is audio-permutation invariant") {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        auto m = test_util::random_matrix<double>(2 + trial % 5, 1 + trial % 6, rng);
        ves::SimilarityVolume<double> s{m, 0, 0};
        CHECK(ves::psi(s) == test_util::psi_oracle(m));

        Matrix<double> rev(m.rows, m.cols);
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j) rev(i, j) = m(m.rows - 1 - i, j);
        ves::SimilarityVolume<double> rs{rev, 0, 0};
        CHECK(ves::psi(rs) == ves::psi(s));
    }
}

TEST_CASE("global_pool_audio equal tokens") {
    const std::size_t T = 3, D = 4;
    Matrix<double> tokens(T, D);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < D; ++j) tokens(t, j) = 0.5 * double(j + 1);
    auto out = ves::global_pool_audio(make_set(tokens, MaskVector(T, 1)), kEps);
    for (std::size_t j = 0; j < D; ++j)
        CHECK(out[j] == Catch::Approx(0.5 * double(j + 1) * double(T) / (double(T) + kEps))
                            .margin(1e-15));
}

TEST_CASE("global_pool_audio zero mask") {
    auto out = ves::global_pool_audio(make_set(Matrix<double>(3, 4, 1.0), MaskVector(3, 0)), kEps);
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("global_pool_audio mixed mask hand oracle") {
    auto tokens = Matrix<double>::from_rows({{1, 2}, {10, 20}, {3, 4}});
    auto out = ves::global_pool_audio(make_set(tokens, MaskVector({1, 0, 1})), kEps);
    CHECK(out[0] == Catch::Approx(4.0 / (2.0 + kEps)).margin(1e-15));
    CHECK(out[1] == Catch::Approx(6.0 / (2.0 + kEps)).margin(1e-15));
}

TEST_CASE("global_pool_audio requires a mask") {
    CHECK_THROWS_AS(ves::global_pool_audio(make_set(Matrix<double>(2, 2)), kEps),
                    std::invalid_argument);
}

TEST_CASE("global_pool_visual single patch") {
    auto tokens = Matrix<double>::from_rows({{1.5, -2.0, 0.25}});
    auto out = ves::global_pool_visual(make_set(tokens));
    CHECK(out[0] == 1.5);
    CHECK(out[1] == -2.0);
    CHECK(out[2] == 0.25);
}

TEST_CASE("global_pool_visual opposite vectors cancel") {
    auto tokens = Matrix<double>::from_rows({{1, -2, 3}, {-1, 2, -3}});
    auto out = ves::global_pool_visual(make_set(tokens));
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("global_pool_visual matches mean oracle and permutation invariance") {
    std::mt19937_64 rng(51);
    auto tokens = test_util::random_matrix<double>(4, 5, rng);
    auto out = ves::global_pool_visual(make_set(tokens));
    auto oracle = test_util::pool_visual_oracle(tokens);
    for (std::size_t j = 0; j < 5; ++j)
        CHECK(out[j] == Catch::Approx(oracle[j]).margin(1e-15));

    Matrix<double> rev(4, 5);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) rev(i, j) = tokens(3 - i, j);
    auto out2 = ves::global_pool_visual(make_set(rev));
    for (std::size_t j = 0; j < 5; ++j)
        CHECK(out2[j] == Catch::Approx(out[j]).margin(1e-15));
}

TEST_CASE("clip_matrix_dense B=1 equals phi") {
    std::mt19937_64 rng(61);
    auto a = random_normalized_set(4, 5, rng, true);
    auto v = random_normalized_set(6, 5, rng, false);
    auto c = ves::clip_matrix_dense<double>({a}, {v}, kEps);
    CHECK(c.values.rows == 1);
    CHECK(c.values(0, 0) == ves::phi(ves::similarity_volume(a, v), *a.mask, kEps));
}

TEST_CASE("clip_matrix_dense orthogonal pair") {
    auto e0 = Matrix<double>::from_rows({{1, 0}});
    auto e1 = Matrix<double>::from_rows({{0, 1}});
    auto a0 = make_set(e0, MaskVector(1, 1));
    auto a1 = make_set(e1, MaskVector(1, 1));
    auto c = ves::clip_matrix_dense<double>({a0, a1}, {make_set(e0), make_set(e1)}, kEps);
    CHECK(c.values(0, 0) == Catch::Approx(1.0 / (1.0 + kEps)).margin(1e-15));
    CHECK(c.values(0, 1) == Catch::Approx(0.0).margin(1e-15));
    CHECK(c.values(1, 1) == Catch::Approx(1.0 / (1.0 + kEps)).margin(1e-15));
}

TEST_CASE("clip_matrix_dense matches pair loop oracle") {
    std::mt19937_64 rng(62);
    std::vector<TokenSet<double>> audio, visual;
    for (int b = 0; b < 3; ++b) {
        audio.push_back(random_normalized_set(3 + b, 4, rng, true));
        visual.push_back(random_normalized_set(5, 4, rng, false));
    }
    auto c = ves::clip_matrix_dense(audio, visual, kEps);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t b2 = 0; b2 < 3; ++b2) {
            auto s = ves::matmul_nt(audio[b].tokens, visual[b2].tokens);
            CHECK(c.values(b, b2) == test_util::phi_oracle(s, *audio[b].mask, kEps));
        }
}

TEST_CASE("clip_matrix_dense self-similar batch has diagonal argmax") {
    std::mt19937_64 rng(63);
    std::vector<TokenSet<double>> audio, visual;
    for (int b = 0; b < 4; ++b) {
        auto s = random_normalized_set(5, 8, rng, false);
        auto a = s;
        a.mask = MaskVector(5, 1);
        audio.push_back(a);
        visual.push_back(s);
    }
    auto c = ves::clip_matrix_dense(audio, visual, kEps);
    for (std::size_t b = 0; b < 4; ++b)
        CHECK(ves::row_argmax(c.values, b) == b);
}

TEST_CASE("clip_matrix_dense rejects length mismatch") {
    std::mt19937_64 rng(64);
    std::vector<TokenSet<double>> audio{random_normalized_set(3, 4, rng, true)};
    std::vector<TokenSet<double>> visual;
    CHECK_THROWS_AS(ves::clip_matrix_dense(audio, visual, kEps), std::invalid_argument);
}

TEST_CASE("clip_matrix_global identical samples renormalized") {
    std::mt19937_64 rng(71);
    auto a = random_normalized_set(4, 6, rng, false);
    a.mask = MaskVector(4, 1);
    auto v = random_normalized_set(4, 6, rng, false);
    std::vector<TokenSet<double>> audio{a, a, a}, visual{v, v, v};
    // identical pooled vectors on both sides of each pair: after
    // renormalization every entry is the same cosine
    auto c = ves::clip_matrix_global(audio, visual, kEps, true);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(c.values(i, j) == Catch::Approx(c.values(0, 0)).margin(1e-15));

    // all four token sets identical: cosine of a vector with itself is 1
    std::vector<TokenSet<double>> audio2{a, a}, visual2;
    for (int i = 0; i < 2; ++i) {
        auto vs = a;
        vs.mask.reset();
        visual2.push_back(vs);
    }
    auto c2 = ves::clip_matrix_global(audio2, visual2, kEps, true);
    for (double x : c2.values.data) CHECK(x == Catch::Approx(1.0).margin(1e-5));
}

TEST_CASE("clip_matrix_global orthogonal pools give zero") {
    auto a = make_set(Matrix<double>::from_rows({{1, 0}}), MaskVector(1, 1));
    auto v = make_set(Matrix<double>::from_rows({{0, 1}}));
    for (bool renorm : {false, true}) {
        auto c = ves::clip_matrix_global<double>({a}, {v}, kEps, renorm);
        CHECK(c.values(0, 0) == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("clip_matrix_global matches pool-then-dot oracle") {
    std::mt19937_64 rng(72);
    std::vector<TokenSet<double>> audio, visual;
    for (int b = 0; b < 3; ++b) {
        audio.push_back(random_normalized_set(4, 5, rng, true));
        visual.push_back(random_normalized_set(6, 5, rng, false));
    }
    auto c = ves::clip_matrix_global(audio, visual, kEps, false);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t b2 = 0; b2 < 3; ++b2) {
            auto abar = test_util::pool_audio_oracle(audio[b].tokens, *audio[b].mask, kEps);
            auto vbar = test_util::pool_visual_oracle(visual[b2].tokens);
            double dot = 0;
            for (std::size_t j = 0; j < abar.size(); ++j) dot += abar[j] * vbar[j];
            CHECK(c.values(b, b2) == Catch::Approx(dot).margin(1e-15));
        }
}

TEST_CASE("row_argmax breaks ties toward the lowest index") {
    auto m = Matrix<double>::from_rows({{0.5, 0.7, 0.7, 0.1}});
    CHECK(ves::row_argmax(m, 0) == 1);
    auto m2 = Matrix<double>::from_rows({{0.3}, {0.9}, {0.9}});
    CHECK(ves::col_argmax(m2, 0) == 1);
}

TEST_CASE("TokenSet validate rejects mask length mismatch") {
    auto s = make_set(Matrix<double>(3, 2), MaskVector(2, 1));
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}
