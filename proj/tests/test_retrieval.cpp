#include "catch_amalgamated.hpp"

#include <algorithm>
#include <random>

#include "ves/retrieval.hpp"
#include "test_util.hpp"

using ves::ClipSimilarityMatrix;
using ves::Direction;
using ves::Matrix;

namespace {

ClipSimilarityMatrix<double> clip(Matrix<double> m) {
    return {std::move(m), ves::ClipSimilarityKind::dense};
}

// Sort-based rank oracle with the same strictly-greater convention.
std::vector<std::size_t> rank_oracle(const Matrix<double>& m, Direction dir,
                                     bool ties_against) {
    std::vector<std::size_t> out(m.rows);
    for (std::size_t b = 0; b < m.rows; ++b) {
        std::vector<double> scores;
        for (std::size_t j = 0; j < m.rows; ++j)
            scores.push_back(dir == Direction::audio_to_visual ? m(b, j) : m(j, b));
        const double self = scores[b];
        std::sort(scores.rbegin(), scores.rend());
        std::size_t r = 1;
        for (double s : scores) {
            if (s > self || (ties_against && s == self)) ++r;
        }
        if (ties_against) --r;  // self was counted once by the equality test
        out[b] = r;
    }
    return out;
}

}  // namespace

TEST_CASE("ranks on the identity matrix are all one") {
    auto c = clip(Matrix<double>::identity(5));
    for (auto dir : {Direction::audio_to_visual, Direction::visual_to_audio}) {
        for (std::size_t r : ves::ranks(c, dir)) CHECK(r == 1);
    }
}

TEST_CASE("rank is N when the diagonal is strictly smallest") {
    const std::size_t n = 4;
    Matrix<double> m(n, n, 1.0);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 0.0;
    for (std::size_t r : ves::ranks(clip(m), Direction::audio_to_visual)) CHECK(r == n);
}

TEST_CASE("ranks match the sort-based oracle") {
    std::mt19937_64 rng(301);
    for (int trial = 0; trial < 100; ++trial) {
        auto m = test_util::random_matrix<double>(4, 4, rng);
        for (auto dir : {Direction::audio_to_visual, Direction::visual_to_audio}) {
            for (bool against : {false, true}) {
                auto got = ves::ranks(clip(m), dir, against);
                auto want = rank_oracle(m, dir, against);
                CHECK(got == want);
            }
        }
    }
}

TEST_CASE("ties favor the query by default and count against with the flag") {
    Matrix<double> m(3, 3, 0.5);  // every score tied
    auto fav = ves::ranks(clip(m), Direction::audio_to_visual, false);
    auto against = ves::ranks(clip(m), Direction::audio_to_visual, true);
    for (std::size_t r : fav) CHECK(r == 1);
    for (std::size_t r : against) CHECK(r == 3);
}

TEST_CASE("ranks rejects non-square input") {
    CHECK_THROWS_AS(ves::ranks(clip(Matrix<double>(2, 3)), Direction::audio_to_visual),
                    std::invalid_argument);
}

TEST_CASE("ranks are invariant under strictly increasing transforms") {
    std::mt19937_64 rng(302);
    auto m = test_util::random_matrix<double>(6, 6, rng);
    auto base = ves::ranks(clip(m), Direction::audio_to_visual);
    auto warped = m;
    for (double& v : warped.data) v = std::exp(3.0 * v) + 0.1 * v;
    CHECK(ves::ranks(clip(warped), Direction::audio_to_visual) == base);
}

TEST_CASE("report on all-ones ranks") {
    auto rep = ves::report(std::vector<std::size_t>(7, 1), Direction::audio_to_visual);
    CHECK(rep.recall_at.at(1) == 100.0);
    CHECK(rep.mean_rank == 1.0);
    CHECK(rep.median_rank == 1.0);
    CHECK(rep.n == 7);
}

TEST_CASE("report on uniform ranks 1..N") {
    const std::size_t n = 10;
    std::vector<std::size_t> ranks(n);
    for (std::size_t i = 0; i < n; ++i) ranks[i] = i + 1;
    auto rep = ves::report(ranks, Direction::visual_to_audio);
    CHECK(rep.mean_rank == Catch::Approx(double(n + 1) / 2.0));
    CHECK(rep.recall_at.at(5) == 50.0);
}

TEST_CASE("report midpoint median can be half-integer") {
    auto rep = ves::report({58, 61, 3, 200}, Direction::audio_to_visual);
    CHECK(rep.median_rank == 59.5);
}

TEST_CASE("recall is non-decreasing in K") {
    std::mt19937_64 rng(303);
    std::uniform_int_distribution<std::size_t> pick(1, 120);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::size_t> ranks(30);
        for (auto& r : ranks) r = pick(rng);
        auto rep = ves::report(ranks, Direction::audio_to_visual);
        CHECK(rep.recall_at.at(1) <= rep.recall_at.at(5));
        CHECK(rep.recall_at.at(5) <= rep.recall_at.at(10));
        CHECK(rep.recall_at.at(10) <= rep.recall_at.at(50));
        CHECK(rep.mean_rank >= 1.0);
        CHECK(rep.median_rank >= 1.0);
    }
}

TEST_CASE("report rejects empty input") {
    CHECK_THROWS_AS(ves::report({}, Direction::audio_to_visual), std::invalid_argument);
}

TEST_CASE("random_baseline small N matches closed forms") {
    auto rep2 = ves::random_baseline(2, 2000, 41);
    CHECK(rep2.mean_rank == Catch::Approx(1.5).margin(0.05));

    auto rep100 = ves::random_baseline(100, 50, 42);
    CHECK(rep100.mean_rank == Catch::Approx(50.5).epsilon(0.05));
}

TEST_CASE("random_baseline large N matches the uniform expectation") {
    auto rep = ves::random_baseline(5000, 20, 43);
    CHECK(rep.mean_rank == Catch::Approx(2500.5).epsilon(0.02));
    CHECK(rep.recall_at.at(1) >= 0.0);
    CHECK(rep.recall_at.at(1) <= 0.06);
}

TEST_CASE("random_baseline rejects degenerate arguments") {
    CHECK_THROWS_AS(ves::random_baseline(1, 10, 1), std::invalid_argument);
    CHECK_THROWS_AS(ves::random_baseline(10, 0, 1), std::invalid_argument);
}

TEST_CASE("relative_improvement reproduces the published comparison") {
    CHECK(ves::relative_improvement(9.90, 6.22) == Catch::Approx(59.2).margin(0.05));
    CHECK_THROWS_AS(ves::relative_improvement(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("report serializations carry the documented field order") {
    auto rep = ves::report({1, 2, 3, 4}, Direction::audio_to_visual);
    const std::string kv = ves::report_to_kv(rep);
    CHECK(kv.find("direction=a2v\n") == 0);
    CHECK(kv.find("n=4") != std::string::npos);
    CHECK(kv.find("recall_at_1=") < kv.find("recall_at_5="));
    CHECK(kv.find("recall_at_50=") < kv.find("mean_rank="));
    CHECK(kv.find("mean_rank=") < kv.find("median_rank="));

    const std::string row = ves::report_table_row("dense", rep);
    CHECK(row.rfind("dense\ta2v\t", 0) == 0);
    CHECK(ves::report_table_header() ==
          "name\tdirection\tr_at_1\tr_at_5\tr_at_10\tr_at_50\tmean_rank\tmedian_rank");
}
