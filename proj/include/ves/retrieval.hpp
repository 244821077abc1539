#pragma once

// Cross-modal retrieval metrics: ranks, Recall@K, mean/median rank, and the
// uniform random baseline.

#include <algorithm>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ves/aggregation.hpp"
#include "ves/matrix.hpp"

namespace ves {

enum class Direction { audio_to_visual, visual_to_audio };

inline const char* direction_name(Direction d) {
    return d == Direction::audio_to_visual ? "a2v" : "v2a";
}

inline const std::vector<std::size_t>& recall_ks() {
    static const std::vector<std::size_t> ks{1, 5, 10, 50};
    return ks;
}

struct RetrievalReport {
    Direction direction = Direction::audio_to_visual;
    std::map<std::size_t, double> recall_at;  // percentage
    double mean_rank = 0;
    double median_rank = 0;
    std::size_t n = 0;
};

// Rank of the diagonal entry among its row (a2v) or column (v2a).
// Default convention: 1 + count of strictly greater scores, so ties
// resolve in the query's favor; ties_against flips that.
template <typename T>
std::vector<std::size_t> ranks(const ClipSimilarityMatrix<T>& c, Direction dir,
                               bool ties_against = false) {
    const Matrix<T>& m = c.values;
    if (m.rows != m.cols || m.rows == 0)
        throw std::invalid_argument("ranks: clip matrix must be square, got " + m.shape_str());
    std::vector<std::size_t> out(m.rows);
    for (std::size_t b = 0; b < m.rows; ++b) {
        const T self = m(b, b);
        std::size_t r = 1;
        for (std::size_t j = 0; j < m.rows; ++j) {
            if (j == b) continue;
            const T other = dir == Direction::audio_to_visual ? m(b, j) : m(j, b);
            if (other > self || (ties_against && other == self)) ++r;
        }
        out[b] = r;
    }
    return out;
}

inline RetrievalReport report(const std::vector<std::size_t>& rank_values, Direction dir) {
    if (rank_values.empty())
        throw std::invalid_argument("report: empty rank vector");
    RetrievalReport rep;
    rep.direction = dir;
    rep.n = rank_values.size();
    double sum = 0;
    for (std::size_t r : rank_values) sum += double(r);
    rep.mean_rank = sum / double(rep.n);
    std::vector<std::size_t> sorted = rank_values;
    std::sort(sorted.begin(), sorted.end());
    rep.median_rank = rep.n % 2 ? double(sorted[rep.n / 2])
                                : (double(sorted[rep.n / 2 - 1]) + double(sorted[rep.n / 2])) / 2;
    for (std::size_t k : recall_ks()) {
        std::size_t hits = 0;
        for (std::size_t r : rank_values) hits += r <= k;
        rep.recall_at[k] = 100.0 * double(hits) / double(rep.n);
    }
    return rep;
}

// Scores i.i.d. uniform similarity rows through the same rank pipeline.
// Rows are generated per query; each is independent so both directions
// share the distribution.
inline RetrievalReport random_baseline(std::size_t n, std::size_t trials, std::uint64_t seed,
                                       bool ties_against = false) {
    if (n < 2)
        throw std::invalid_argument("random_baseline: need N >= 2");
    if (trials == 0)
        throw std::invalid_argument("random_baseline: need trials >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<std::size_t> all_ranks;
    all_ranks.reserve(n * trials);
    for (std::size_t t = 0; t < trials; ++t) {
        for (std::size_t q = 0; q < n; ++q) {
            const double self = dist(rng);
            std::size_t r = 1;
            for (std::size_t j = 0; j + 1 < n; ++j) {
                const double other = dist(rng);
                if (other > self || (ties_against && other == self)) ++r;
            }
            all_ranks.push_back(r);
        }
    }
    return report(all_ranks, Direction::audio_to_visual);
}

// (a - b) / b in percent; the cross-checkpoint R@1 comparison.
inline double relative_improvement(double a, double b) {
    if (b == 0)
        throw std::invalid_argument("relative_improvement: baseline is zero");
    return 100.0 * (a - b) / b;
}

// Line-oriented key=value serialization; field order is fixed.
inline std::string report_to_kv(const RetrievalReport& r) {
    std::ostringstream os;
    os << "direction=" << direction_name(r.direction) << "\n";
    os << "n=" << r.n << "\n";
    for (std::size_t k : recall_ks())
        os << "recall_at_" << k << "=" << r.recall_at.at(k) << "\n";
    os << "mean_rank=" << r.mean_rank << "\n";
    os << "median_rank=" << r.median_rank << "\n";
    return os.str();
}

// One tab-separated table row: name, direction, R@1, R@5, R@10, R@50,
// mean rank, median rank.
inline std::string report_table_row(const std::string& name, const RetrievalReport& r) {
    std::ostringstream os;
    os << name << "\t" << direction_name(r.direction);
    for (std::size_t k : recall_ks()) os << "\t" << r.recall_at.at(k);
    os << "\t" << r.mean_rank << "\t" << r.median_rank;
    return os.str();
}

inline std::string report_table_header() {
    return "name\tdirection\tr_at_1\tr_at_5\tr_at_10\tr_at_50\tmean_rank\tmedian_rank";
}

}  // namespace ves
