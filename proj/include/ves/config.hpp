#pragma once

// Key=value run configuration: one human-readable file, '#' comments,
// later assignments win. CLI flags overlay entries after the file loads.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ves/objective.hpp"
#include "ves/pipeline.hpp"
#include "ves/synthetic.hpp"

namespace ves {

class KvConfig {
public:
    KvConfig() = default;

    static KvConfig from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f)
            throw std::invalid_argument("config file not found: " + path);
        KvConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const auto trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config " + path + ":" + std::to_string(lineno) +
                                            ": expected key=value");
            cfg.set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    // "key=value" as passed on the command line
    void set_pair(const std::string& pair) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got: " + pair);
        set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end())
            throw std::invalid_argument("config field missing: " + key);
        return it->second;
    }

    long long get_int(const std::string& key, long long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const long long v = std::stoll(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw std::invalid_argument("config field " + key + " is not an integer: " +
                                        it->second);
        }
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw std::invalid_argument("config field " + key + " is not a number: " +
                                        it->second);
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw std::invalid_argument("config field " + key + " is not a boolean: " + it->second);
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

inline CorpusConfig corpus_config_from(const KvConfig& kv) {
    CorpusConfig c;
    c.num_samples = std::size_t(kv.get_int("num_samples", (long long)c.num_samples));
    c.num_concepts = std::size_t(kv.get_int("concepts", (long long)c.num_concepts));
    c.concepts_per_sample =
        std::size_t(kv.get_int("concepts_per_sample", (long long)c.concepts_per_sample));
    c.grid_side = std::size_t(kv.get_int("grid_side", (long long)c.grid_side));
    c.patch_block_side =
        std::size_t(kv.get_int("patch_block_side", (long long)c.patch_block_side));
    c.audio_tokens_per_segment = std::size_t(
        kv.get_int("audio_tokens_per_segment", (long long)c.audio_tokens_per_segment));
    c.silence_fraction = kv.get_double("silence_fraction", c.silence_fraction);
    c.noise_sigma = kv.get_double("noise_sigma", c.noise_sigma);
    c.d_audio_in = std::size_t(kv.get_int("d_audio_in", (long long)c.d_audio_in));
    c.d_visual_in = std::size_t(kv.get_int("d_visual_in", (long long)c.d_visual_in));
    c.seed = std::uint64_t(kv.get_int("seed", (long long)c.seed));
    c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
    c.validate();
    return c;
}

template <typename T>
TrainConfig<T> train_config_from(const KvConfig& kv) {
    TrainConfig<T> c;
    c.objective = objective_from_name(kv.get_string("objective", "dense"));
    c.lambda = T(kv.get_double("lambda", 0.7));
    c.eps = T(kv.get_double("eps", 1e-6));
    c.renormalize_global = kv.get_bool("renormalize_global", true);
    c.batch_size = std::size_t(kv.get_int("batch_size", 32));
    c.accum_steps = std::size_t(kv.get_int("accum_steps", 1));
    c.steps = std::size_t(kv.get_int("steps", 500));
    c.seed = std::uint64_t(kv.get_int("seed", 1));
    c.d_hidden = std::size_t(kv.get_int("d_hidden", 64));
    c.d_out = std::size_t(kv.get_int("d_out", 64));
    c.initial_tau = T(kv.get_double("initial_tau", 10.0));
    c.snapshot_every = std::size_t(kv.get_int("snapshot_every", 0));
    c.schedule.base_lr = T(kv.get_double("base_lr", 3e-4));
    c.schedule.total_steps = std::size_t(kv.get_int("total_steps", (long long)c.steps));
    // default warmup: 5% of total steps
    c.schedule.warmup_steps = std::size_t(
        kv.get_int("warmup_steps", (long long)(c.schedule.total_steps / 20)));
    c.schedule.final_lr_fraction = T(kv.get_double("final_lr_fraction", 0.01));
    c.validate();
    return c;
}

}  // namespace ves
