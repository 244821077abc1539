#pragma once

// Synthetic grounded corpus: paired audio/visual token sets with planted
// concept correspondences. Each sample picks m concepts, places each on a
// contiguous square patch block and in a contiguous audio segment (segment
// order shuffled per sample), fills the rest with isotropic distractor
// tokens and silence, and adds Gaussian noise of scale sigma everywhere.

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ves/cache.hpp"
#include "ves/matrix.hpp"

namespace ves {

struct CorpusConfig {
    std::size_t num_samples = 2500;
    std::size_t num_concepts = 12;        // K
    std::size_t concepts_per_sample = 3;  // m
    std::size_t grid_side = 6;            // g, N_v = g*g
    std::size_t patch_block_side = 2;     // concept block is side x side patches
    std::size_t audio_tokens_per_segment = 10;  // raw tokens, pre-downsampling
    double silence_fraction = 0.25;
    double noise_sigma = 0.2;
    std::size_t d_audio_in = 48;
    std::size_t d_visual_in = 48;
    std::uint64_t seed = 1;
    double val_fraction = 0.2;

    void validate() const {
        auto fail = [](const std::string& field, const std::string& why) {
            throw std::invalid_argument("CorpusConfig: " + field + " " + why);
        };
        if (num_samples < 1) fail("num_samples", "must be >= 1");
        if (num_concepts < 1) fail("concepts", "must be >= 1");
        if (concepts_per_sample < 1) fail("concepts_per_sample", "must be >= 1");
        if (concepts_per_sample > num_concepts)
            fail("concepts_per_sample", "exceeds concept count");
        if (grid_side < 1) fail("grid_side", "must be >= 1");
        if (patch_block_side < 1 || patch_block_side > grid_side)
            fail("patch_block_side", "must lie in [1, grid_side]");
        const std::size_t slots = (grid_side / patch_block_side) * (grid_side / patch_block_side);
        if (concepts_per_sample > slots)
            fail("concepts_per_sample", "exceeds available patch blocks");
        if (audio_tokens_per_segment < 1) fail("audio_tokens_per_segment", "must be >= 1");
        if (!(silence_fraction >= 0.0 && silence_fraction < 1.0))
            fail("silence_fraction", "must lie in [0, 1)");
        if (!(noise_sigma >= 0.0)) fail("noise_sigma", "must be >= 0");
        if (d_audio_in < 1 || d_visual_in < 1) fail("backbone_dims", "must be >= 1");
        if (d_audio_in != d_visual_in)
            fail("backbone_dims", "must be equal (shared concept prototype space)");
        if (num_concepts > d_audio_in)
            fail("concepts", "exceeds backbone dim (orthogonalization needs K <= D)");
        if (!(val_fraction >= 0.0 && val_fraction < 1.0))
            fail("val_fraction", "must lie in [0, 1)");
    }
};

// Labels: concept id >= 0, -1 silence/background, -2 mixed (downsampled
// token straddling two concepts).
inline constexpr int kLabelSilence = -1;
inline constexpr int kLabelMixed = -2;

template <typename T>
struct SyntheticSample {
    Matrix<T> audio_raw;
    MaskVector audio_mask_raw;
    Matrix<T> visual_raw;  // g*g x D
    std::vector<int> audio_labels_raw;
    std::vector<int> patch_labels;
    std::vector<int> concepts;  // in audio segment order
};

template <typename T>
struct Corpus {
    CorpusConfig cfg;
    Matrix<T> concept_bank;  // K x D
    std::vector<SyntheticSample<T>> samples;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 over seed + index
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Pairwise-orthogonal unit vectors via seeded modified Gram-Schmidt.
template <typename T>
Matrix<T> gen_concepts(std::size_t k, std::size_t d, std::uint64_t seed) {
    if (k > d)
        throw std::invalid_argument("gen_concepts: K=" + std::to_string(k) +
                                    " exceeds D=" + std::to_string(d));
    std::mt19937_64 rng(seed);
    std::normal_distribution<T> gauss(T(0), T(1));
    Matrix<T> bank(k, d);
    for (std::size_t i = 0; i < k; ++i) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 64)
                throw std::runtime_error("gen_concepts: orthogonalization failed");
            for (std::size_t j = 0; j < d; ++j) bank(i, j) = gauss(rng);
            for (std::size_t p = 0; p < i; ++p) {
                T dot = T(0);
                for (std::size_t j = 0; j < d; ++j) dot += bank(i, j) * bank(p, j);
                for (std::size_t j = 0; j < d; ++j) bank(i, j) -= dot * bank(p, j);
            }
            const T n = row_norm(bank, i);
            if (n > T(1e-6)) {
                for (std::size_t j = 0; j < d; ++j) bank(i, j) /= n;
                break;
            }
        }
    }
    return bank;
}

namespace detail {

template <typename T>
void write_unit_noise(T* dst, std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<T> gauss(T(0), T(1));
    T n = T(0);
    for (std::size_t j = 0; j < d; ++j) {
        dst[j] = gauss(rng);
        n += dst[j] * dst[j];
    }
    n = std::max(std::sqrt(n), T(1e-12));
    for (std::size_t j = 0; j < d; ++j) dst[j] /= n;
}

template <typename T>
void add_noise(T* dst, std::size_t d, T sigma, std::mt19937_64& rng) {
    if (sigma == T(0)) return;
    std::normal_distribution<T> gauss(T(0), sigma);
    for (std::size_t j = 0; j < d; ++j) dst[j] += gauss(rng);
}

// Sample m distinct values from [0, n) by partial Fisher-Yates.
inline std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t m,
                                                std::mt19937_64& rng) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(m);
    return pool;
}

}  // namespace detail

template <typename T>
SyntheticSample<T> gen_sample(const CorpusConfig& cfg, const Matrix<T>& bank,
                              std::uint64_t sample_seed) {
    std::mt19937_64 rng(sample_seed);
    const std::size_t g = cfg.grid_side;
    const std::size_t d = cfg.d_visual_in;
    const std::size_t blk = cfg.patch_block_side;
    const std::size_t coarse = g / blk;
    const T sigma = T(cfg.noise_sigma);

    SyntheticSample<T> s;

    auto chosen = detail::sample_distinct(cfg.num_concepts, cfg.concepts_per_sample, rng);
    for (std::size_t c : chosen) s.concepts.push_back(int(c));

    // visual: each concept gets one coarse block, everything else background
    auto slots = detail::sample_distinct(coarse * coarse, cfg.concepts_per_sample, rng);
    s.patch_labels.assign(g * g, kLabelSilence);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const std::size_t sr = (slots[i] / coarse) * blk;
        const std::size_t sc = (slots[i] % coarse) * blk;
        for (std::size_t r = sr; r < sr + blk; ++r)
            for (std::size_t c = sc; c < sc + blk; ++c)
                s.patch_labels[r * g + c] = s.concepts[i];
    }
    s.visual_raw = Matrix<T>(g * g, d);
    for (std::size_t p = 0; p < g * g; ++p) {
        T* row = s.visual_raw.row_ptr(p);
        if (s.patch_labels[p] >= 0)
            std::copy(bank.row_ptr(s.patch_labels[p]), bank.row_ptr(s.patch_labels[p]) + d, row);
        else
            detail::write_unit_noise(row, d, rng);
        detail::add_noise(row, d, sigma, rng);
    }

    // audio: shuffled segment order, silence split across the m+1 gaps
    std::shuffle(s.concepts.begin(), s.concepts.end(), rng);
    const std::size_t n_speech = cfg.concepts_per_sample * cfg.audio_tokens_per_segment;
    const std::size_t n_silence = static_cast<std::size_t>(
        std::llround(cfg.silence_fraction * double(n_speech) / (1.0 - cfg.silence_fraction)));
    std::vector<std::size_t> gap(cfg.concepts_per_sample + 1, 0);
    std::uniform_int_distribution<std::size_t> pick_gap(0, cfg.concepts_per_sample);
    for (std::size_t i = 0; i < n_silence; ++i) ++gap[pick_gap(rng)];

    const std::size_t n_total = n_speech + n_silence;
    s.audio_raw = Matrix<T>(n_total, cfg.d_audio_in);
    s.audio_mask_raw = MaskVector(n_total, 0);
    s.audio_labels_raw.assign(n_total, kLabelSilence);
    std::size_t t = 0;
    auto emit_silence = [&](std::size_t n) {
        for (std::size_t i = 0; i < n; ++i, ++t) {
            detail::write_unit_noise(s.audio_raw.row_ptr(t), cfg.d_audio_in, rng);
            detail::add_noise(s.audio_raw.row_ptr(t), cfg.d_audio_in, sigma, rng);
        }
    };
    for (std::size_t seg = 0; seg < cfg.concepts_per_sample; ++seg) {
        emit_silence(gap[seg]);
        const int cid = s.concepts[seg];
        for (std::size_t i = 0; i < cfg.audio_tokens_per_segment; ++i, ++t) {
            T* row = s.audio_raw.row_ptr(t);
            std::copy(bank.row_ptr(cid), bank.row_ptr(cid) + cfg.d_audio_in, row);
            detail::add_noise(row, cfg.d_audio_in, sigma, rng);
            s.audio_mask_raw.bits[t] = 1;
            s.audio_labels_raw[t] = cid;
        }
    }
    emit_silence(gap[cfg.concepts_per_sample]);
    return s;
}

// Label counterpart of the stride-2 token pooling: agreeing pairs keep
// their label, speech absorbs silence, two different concepts give "mixed".
inline std::vector<int> downsample_labels(const std::vector<int>& labels) {
    std::vector<int> out(labels.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const int a = labels[2 * i], b = labels[2 * i + 1];
        if (a == b) out[i] = a;
        else if (a == kLabelSilence) out[i] = b;
        else if (b == kLabelSilence) out[i] = a;
        else out[i] = kLabelMixed;
    }
    return out;
}

template <typename T>
Corpus<T> gen_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    Corpus<T> corpus;
    corpus.cfg = cfg;
    corpus.concept_bank = gen_concepts<T>(cfg.num_concepts, cfg.d_audio_in, cfg.seed);
    corpus.samples.reserve(cfg.num_samples);
    for (std::size_t i = 0; i < cfg.num_samples; ++i)
        corpus.samples.push_back(gen_sample(cfg, corpus.concept_bank, derive_seed(cfg.seed, i)));
    // split: the last round(num * val_fraction) samples are validation
    std::size_t val_count = static_cast<std::size_t>(
        std::llround(cfg.val_fraction * double(cfg.num_samples)));
    val_count = std::min(val_count, cfg.num_samples - 1);
    for (std::size_t i = 0; i < cfg.num_samples; ++i)
        (i + val_count < cfg.num_samples ? corpus.train_indices : corpus.val_indices).push_back(i);
    return corpus;
}

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

inline std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

inline std::map<std::string, std::string> parse_label(const std::string& label) {
    std::map<std::string, std::string> out;
    std::istringstream is(label);
    std::string field;
    while (std::getline(is, field, ';')) {
        const auto eq = field.find('=');
        if (eq != std::string::npos) out[field.substr(0, eq)] = field.substr(eq + 1);
    }
    return out;
}

}  // namespace detail

inline std::string corpus_config_to_string(const CorpusConfig& c) {
    std::ostringstream os;
    os << "num_samples=" << c.num_samples << ";concepts=" << c.num_concepts
       << ";concepts_per_sample=" << c.concepts_per_sample << ";grid_side=" << c.grid_side
       << ";patch_block_side=" << c.patch_block_side
       << ";audio_tokens_per_segment=" << c.audio_tokens_per_segment
       << ";silence_fraction=" << c.silence_fraction << ";noise_sigma=" << c.noise_sigma
       << ";d_audio_in=" << c.d_audio_in << ";d_visual_in=" << c.d_visual_in
       << ";seed=" << c.seed << ";val_fraction=" << c.val_fraction;
    return os.str();
}

inline CorpusConfig corpus_config_from_string(const std::string& s) {
    auto kv = detail::parse_label(s);
    CorpusConfig c;
    c.num_samples = std::stoull(kv.at("num_samples"));
    c.num_concepts = std::stoull(kv.at("concepts"));
    c.concepts_per_sample = std::stoull(kv.at("concepts_per_sample"));
    c.grid_side = std::stoull(kv.at("grid_side"));
    c.patch_block_side = std::stoull(kv.at("patch_block_side"));
    c.audio_tokens_per_segment = std::stoull(kv.at("audio_tokens_per_segment"));
    c.silence_fraction = std::stod(kv.at("silence_fraction"));
    c.noise_sigma = std::stod(kv.at("noise_sigma"));
    c.d_audio_in = std::stoull(kv.at("d_audio_in"));
    c.d_visual_in = std::stoull(kv.at("d_visual_in"));
    c.seed = std::stoull(kv.at("seed"));
    c.val_fraction = std::stod(kv.at("val_fraction"));
    return c;
}

template <typename T>
void save_corpus(const Corpus<T>& corpus, const std::string& path) {
    std::vector<CacheRecord<T>> records;
    records.push_back({corpus.concept_bank, std::nullopt,
                       "kind=bank;" + corpus_config_to_string(corpus.cfg)});
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        const auto& s = corpus.samples[i];
        const bool is_val =
            std::find(corpus.val_indices.begin(), corpus.val_indices.end(), i) !=
            corpus.val_indices.end();
        records.push_back({s.audio_raw, s.audio_mask_raw,
                           "kind=audio;sample=" + std::to_string(i) +
                               ";split=" + (is_val ? "val" : "train") +
                               ";labels=" + detail::join_ints(s.audio_labels_raw) +
                               ";concepts=" + detail::join_ints(s.concepts)});
        records.push_back({s.visual_raw, std::nullopt,
                           "kind=visual;sample=" + std::to_string(i) +
                               ";patch_labels=" + detail::join_ints(s.patch_labels)});
    }
    write_cache(records, path);
}

template <typename T>
Corpus<T> load_corpus(const std::string& path) {
    auto records = read_cache<T>(path);
    if (records.empty() || detail::parse_label(records[0].label)["kind"] != "bank")
        throw CacheError("corpus file missing bank record: " + path);
    Corpus<T> corpus;
    corpus.cfg = corpus_config_from_string(records[0].label);
    corpus.concept_bank = records[0].matrix;
    if (records.size() % 2 != 1)
        throw CacheError("corpus file has an incomplete sample pair: " + path);
    for (std::size_t r = 1; r + 1 < records.size(); r += 2) {
        auto akv = detail::parse_label(records[r].label);
        auto vkv = detail::parse_label(records[r + 1].label);
        if (akv["kind"] != "audio" || vkv["kind"] != "visual")
            throw CacheError("corpus record ordering corrupt at record " + std::to_string(r));
        SyntheticSample<T> s;
        s.audio_raw = records[r].matrix;
        if (!records[r].mask)
            throw CacheError("corpus audio record missing mask at record " + std::to_string(r));
        s.audio_mask_raw = *records[r].mask;
        s.audio_labels_raw = detail::split_ints(akv.at("labels"));
        s.concepts = detail::split_ints(akv.at("concepts"));
        s.visual_raw = records[r + 1].matrix;
        s.patch_labels = detail::split_ints(vkv.at("patch_labels"));
        const std::size_t idx = corpus.samples.size();
        (akv.at("split") == "val" ? corpus.val_indices : corpus.train_indices).push_back(idx);
        corpus.samples.push_back(std::move(s));
    }
    return corpus;
}

template <typename T>
std::string corpus_manifest(const Corpus<T>& corpus) {
    std::ostringstream os;
    os << "config " << corpus_config_to_string(corpus.cfg) << "\n";
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        const bool is_val =
            std::find(corpus.val_indices.begin(), corpus.val_indices.end(), i) !=
            corpus.val_indices.end();
        os << "sample=" << i << " split=" << (is_val ? "val" : "train")
           << " concepts=" << detail::join_ints(corpus.samples[i].concepts)
           << " audio_tokens=" << corpus.samples[i].audio_raw.rows << "\n";
    }
    return os.str();
}

}  // namespace ves
