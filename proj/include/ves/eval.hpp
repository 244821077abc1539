#pragma once

// Evaluation over a corpus split: encoding, clip similarity matrices for
// retrieval, and heatmap-based localization scoring.

#include <map>
#include <vector>

#include "ves/localization.hpp"
#include "ves/model.hpp"
#include "ves/objective.hpp"
#include "ves/retrieval.hpp"
#include "ves/synthetic.hpp"

namespace ves {

template <typename T>
BatchSample<T> to_batch_sample(const SyntheticSample<T>& s) {
    return {downsample_audio(s.audio_raw), downsample_mask(s.audio_mask_raw), s.visual_raw};
}

template <typename T>
struct EncodedSplit {
    std::vector<TokenSet<T>> audio;
    std::vector<TokenSet<T>> visual;
};

template <typename T>
EncodedSplit<T> encode_split(const Model<T>& model, const Corpus<T>& corpus,
                             const std::vector<std::size_t>& indices, T eps) {
    EncodedSplit<T> out;
    out.audio.reserve(indices.size());
    out.visual.reserve(indices.size());
    for (std::size_t i : indices) {
        const auto& s = corpus.samples[i];
        out.audio.push_back(encode_tokens(downsample_audio(s.audio_raw), model.audio_head,
                                          downsample_mask(s.audio_mask_raw), eps));
        out.visual.push_back(encode_tokens(s.visual_raw, model.visual_head, std::nullopt, eps));
    }
    return out;
}

template <typename T>
ClipSimilarityMatrix<T> eval_clip_matrix(const EncodedSplit<T>& split, ClipSimilarityKind kind,
                                         T eps, bool renormalize_global = true) {
    switch (kind) {
        case ClipSimilarityKind::dense:
            return clip_matrix_dense(split.audio, split.visual, eps);
        case ClipSimilarityKind::dense_sym:
            return clip_matrix_dense_sym(split.audio, split.visual, eps);
        case ClipSimilarityKind::global:
            return clip_matrix_global(split.audio, split.visual, eps, renormalize_global);
    }
    throw std::invalid_argument("eval_clip_matrix: unknown kind");
}

template <typename T>
GroundTruthMask ground_truth_mask(const SyntheticSample<T>& s, int concept_id,
                                  std::size_t grid_side) {
    GroundTruthMask m;
    m.side = grid_side;
    m.concept_id = concept_id;
    m.grid.resize(s.patch_labels.size());
    for (std::size_t p = 0; p < s.patch_labels.size(); ++p)
        m.grid[p] = s.patch_labels[p] == concept_id;
    return m;
}

struct LocalizationScores {
    double pointing_accuracy = 0;
    double mean_mass_inside = 0;
    std::size_t tokens_scored = 0;
};

// Heatmaps from each sample's own similarity volume, scored for every
// unmasked token carrying an unambiguous concept label.
template <typename T>
LocalizationScores eval_localization(const Model<T>& model, const Corpus<T>& corpus,
                                     const std::vector<std::size_t>& indices, T eps) {
    const std::size_t g = corpus.cfg.grid_side;
    std::size_t hits = 0, total = 0;
    double mass_sum = 0;
    for (std::size_t i : indices) {
        const auto& s = corpus.samples[i];
        auto audio = encode_tokens(downsample_audio(s.audio_raw), model.audio_head,
                                   downsample_mask(s.audio_mask_raw), eps);
        auto visual = encode_tokens(s.visual_raw, model.visual_head, std::nullopt, eps);
        auto vol = similarity_volume(audio, visual);
        auto labels = downsample_labels(s.audio_labels_raw);
        std::map<int, GroundTruthMask> masks;
        for (int c : s.concepts) masks[c] = ground_truth_mask(s, c, g);
        for (std::size_t t = 0; t < labels.size(); ++t) {
            if (labels[t] < 0 || !(*audio.mask)[t]) continue;
            auto hm = token_heatmap(vol, t, g);
            const auto& mask = masks.at(labels[t]);
            hits += mask.grid[heatmap_argmax(hm)] != 0;
            mass_sum += mass_inside(hm, mask);
            ++total;
        }
    }
    LocalizationScores out;
    out.tokens_scored = total;
    if (total) {
        out.pointing_accuracy = double(hits) / double(total);
        out.mean_mass_inside = mass_sum / double(total);
    }
    return out;
}

}  // namespace ves
