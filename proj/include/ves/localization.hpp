#pragma once

// Per-audio-token heatmaps over the visual patch grid, pointing-game
// scoring against planted ground truth, and bit-exact PGM (P5) export.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ves/aggregation.hpp"
#include "ves/matrix.hpp"

namespace ves {

template <typename T>
struct Heatmap {
    Matrix<T> grid;  // g x g, min-max normalized to [0,1]
    std::size_t token_index = 0;
    T raw_min = T(0);
    T raw_max = T(0);
    bool degenerate = false;  // constant raw row, normalized to all-zeros
};

struct GroundTruthMask {
    std::vector<std::uint8_t> grid;  // g*g, row-major
    std::size_t side = 0;
    int concept_id = kNoConcept;

    static constexpr int kNoConcept = -1;

    std::size_t positives() const {
        std::size_t n = 0;
        for (auto b : grid) n += b;
        return n;
    }
};

// Row t of the similarity volume, reshaped row-major to g x g and
// min-max normalized. Constant rows map to all-zeros.
template <typename T>
Heatmap<T> token_heatmap(const SimilarityVolume<T>& s, std::size_t t, std::size_t g) {
    if (g * g != s.values.cols)
        throw std::invalid_argument("token_heatmap: grid side " + std::to_string(g) +
                                    " does not square to " + std::to_string(s.values.cols) +
                                    " patches");
    if (t >= s.values.rows)
        throw std::invalid_argument("token_heatmap: token index out of range");
    Heatmap<T> h;
    h.token_index = t;
    h.grid = Matrix<T>(g, g);
    const T* row = s.values.row_ptr(t);
    h.raw_min = h.raw_max = row[0];
    for (std::size_t p = 1; p < g * g; ++p) {
        h.raw_min = std::min(h.raw_min, row[p]);
        h.raw_max = std::max(h.raw_max, row[p]);
    }
    if (h.raw_max == h.raw_min) {
        h.degenerate = true;
        return h;
    }
    const T span = h.raw_max - h.raw_min;
    for (std::size_t p = 0; p < g * g; ++p) h.grid.data[p] = (row[p] - h.raw_min) / span;
    return h;
}

template <typename T>
std::size_t heatmap_argmax(const Heatmap<T>& h) {
    std::size_t best = 0;
    for (std::size_t p = 1; p < h.grid.size(); ++p)
        if (h.grid.data[p] > h.grid.data[best]) best = p;
    return best;
}

template <typename T>
struct LabeledHeatmap {
    Heatmap<T> heatmap;
    int concept_id = -1;
};

// Fraction of labeled tokens whose argmax patch lies inside the concept's
// ground-truth region.
template <typename T>
double pointing_accuracy(const std::vector<LabeledHeatmap<T>>& items,
                         const std::map<int, GroundTruthMask>& masks) {
    if (items.empty())
        throw std::invalid_argument("pointing_accuracy: no labeled heatmaps");
    std::size_t hits = 0;
    for (const auto& item : items) {
        auto it = masks.find(item.concept_id);
        if (it == masks.end())
            throw std::invalid_argument("pointing_accuracy: no ground-truth mask for concept " +
                                        std::to_string(item.concept_id));
        hits += it->second.grid[heatmap_argmax(item.heatmap)] != 0;
    }
    return double(hits) / double(items.size());
}

// Heatmap mass inside the mask over total mass; all-zero maps score 0
// and are reported via the degenerate flag upstream.
template <typename T>
double mass_inside(const Heatmap<T>& h, const GroundTruthMask& mask) {
    if (mask.grid.size() != h.grid.size())
        throw std::invalid_argument("mass_inside: mask/heatmap shape mismatch");
    double inside = 0, total = 0;
    for (std::size_t p = 0; p < h.grid.size(); ++p) {
        total += double(h.grid.data[p]);
        if (mask.grid[p]) inside += double(h.grid.data[p]);
    }
    if (total == 0) return 0.0;
    return inside / total;
}

// Binary portable graymap, maxval 255, value = round(255 * entry), with
// optional nearest-neighbor integer upscale.
template <typename T>
void write_pgm(const Heatmap<T>& h, const std::string& path, std::size_t factor = 1) {
    if (factor < 1)
        throw std::invalid_argument("write_pgm: upscale factor must be >= 1");
    const std::size_t g = h.grid.rows;
    const std::size_t side = g * factor;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("write_pgm: cannot open " + path);
    f << "P5\n" << side << " " << side << "\n255\n";
    std::string row_bytes(side, '\0');
    for (std::size_t r = 0; r < g; ++r) {
        for (std::size_t c = 0; c < g; ++c) {
            const auto v = static_cast<unsigned char>(
                std::lround(255.0 * double(h.grid(r, c))));
            for (std::size_t k = 0; k < factor; ++k) row_bytes[c * factor + k] = char(v);
        }
        for (std::size_t k = 0; k < factor; ++k) f.write(row_bytes.data(), side);
    }
    if (!f)
        throw std::runtime_error("write_pgm: write failed for " + path);
}

}  // namespace ves
