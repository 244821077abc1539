#pragma once

// Training machinery: bias-corrected Adam, cosine schedule with warmup,
// gradient accumulation, the deterministic training loop, and checkpoints.

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ves/cache.hpp"
#include "ves/eval.hpp"
#include "ves/objective.hpp"
#include "ves/synthetic.hpp"

namespace ves {

template <typename T>
struct OptimizerState {
    std::map<std::string, Matrix<T>> m;  // first moments
    std::map<std::string, Matrix<T>> v;  // second moments
    std::uint64_t step = 0;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

template <typename T>
void adam_step(Model<T>& model, const GradientStore<T>& grads, OptimizerState<T>& state, T lr) {
    state.step += 1;
    const T bc1 = T(1) - std::pow(state.beta1, T(state.step));
    const T bc2 = T(1) - std::pow(state.beta2, T(state.step));
    for (auto& [name, param] : model.params()) {
        const Matrix<T>& g = grads.at(name);
        if (!g.same_shape(*param))
            throw std::invalid_argument("adam_step: gradient shape " + g.shape_str() +
                                        " != parameter shape " + param->shape_str() +
                                        " for " + name);
        Matrix<T>& m = state.m.try_emplace(name, param->rows, param->cols).first->second;
        Matrix<T>& v = state.v.try_emplace(name, param->rows, param->cols).first->second;
        for (std::size_t i = 0; i < param->size(); ++i) {
            m.data[i] = state.beta1 * m.data[i] + (T(1) - state.beta1) * g.data[i];
            v.data[i] = state.beta2 * v.data[i] + (T(1) - state.beta2) * g.data[i] * g.data[i];
            const T mhat = m.data[i] / bc1;
            const T vhat = v.data[i] / bc2;
            param->data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
    model.clamp_tau();
}

template <typename T>
struct ScheduleConfig {
    T base_lr = T(3e-4);
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;
    T final_lr_fraction = T(0.01);

    void validate() const {
        if (!(base_lr > T(0)))
            throw std::invalid_argument("ScheduleConfig: base_lr must be positive");
        if (warmup_steps > total_steps)
            throw std::invalid_argument("ScheduleConfig: warmup_steps exceeds total_steps");
        if (!(final_lr_fraction >= T(0) && final_lr_fraction <= T(1)))
            throw std::invalid_argument("ScheduleConfig: final_lr_fraction must lie in [0,1]");
    }
};

// Linear ramp to base_lr at warmup_steps, cosine decay to
// final_lr_fraction * base_lr at total_steps, constant floor beyond.
template <typename T>
T lr_at(std::size_t step, const ScheduleConfig<T>& cfg) {
    cfg.validate();
    if (step < cfg.warmup_steps)
        return cfg.base_lr * T(step + 1) / T(cfg.warmup_steps + 1);
    if (step >= cfg.total_steps)
        return cfg.base_lr * cfg.final_lr_fraction;
    const T t = T(step - cfg.warmup_steps) / T(cfg.total_steps - cfg.warmup_steps);
    const T cosine = (T(1) + std::cos(T(std::numbers::pi) * t)) / T(2);
    return cfg.base_lr * (cfg.final_lr_fraction + (T(1) - cfg.final_lr_fraction) * cosine);
}

// Element-wise mean of micro-batch gradients.
template <typename T>
GradientStore<T> accumulate(const std::vector<GradientStore<T>>& micro) {
    if (micro.empty())
        throw std::invalid_argument("accumulate: no gradient buffers");
    GradientStore<T> out = micro[0];
    for (std::size_t k = 1; k < micro.size(); ++k) {
        for (auto& [name, g] : out.grads) {
            const Matrix<T>& other = micro[k].at(name);
            if (!other.same_shape(g))
                throw std::invalid_argument("accumulate: shape mismatch for " + name);
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += other.data[i];
        }
    }
    const T inv = T(1) / T(micro.size());
    for (auto& [name, g] : out.grads)
        for (T& x : g.data) x *= inv;
    return out;
}

template <typename T>
struct TrainConfig {
    Objective objective = Objective::dense;
    T lambda = T(0.7);
    T eps = T(1e-6);
    bool renormalize_global = true;
    std::size_t batch_size = 32;
    std::size_t accum_steps = 1;
    std::size_t steps = 500;
    ScheduleConfig<T> schedule;
    std::uint64_t seed = 1;
    std::size_t d_hidden = 64;
    std::size_t d_out = 64;
    T initial_tau = T(10);
    std::size_t snapshot_every = 0;     // 0 disables retrieval snapshots
    std::size_t snapshot_max_samples = 200;

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (accum_steps < 1) throw std::invalid_argument("TrainConfig: accum_steps must be >= 1");
        if (!(lambda >= T(0) && lambda <= T(1)))
            throw std::invalid_argument("TrainConfig: lambda must lie in [0,1]");
        if (!(eps > T(0))) throw std::invalid_argument("TrainConfig: eps must be positive");
        if (d_hidden < 1 || d_out < 1)
            throw std::invalid_argument("TrainConfig: head dims must be >= 1");
        if (!(initial_tau > T(0)))
            throw std::invalid_argument("TrainConfig: initial_tau must be positive");
        schedule.validate();
    }
};

template <typename T>
struct StepRecord {
    std::size_t step = 0;
    T lr = T(0);
    T loss = T(0);
    T dense_part = T(0);
    T global_part = T(0);
    std::uint64_t batch_hash = 0;
    double snapshot_r1 = -1;  // validation A2V R@1, -1 when not sampled
};

template <typename T>
struct TrainResult {
    Model<T> model;
    OptimizerState<T> opt;
    std::vector<StepRecord<T>> log;
};

inline std::uint64_t fnv1a_extend(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Deterministic single-thread training loop. Batches come from reshuffled
// epochs of the train split; micro-batches within a step never mix into
// each other's negatives.
template <typename T>
TrainResult<T> train(const Corpus<T>& corpus, const TrainConfig<T>& cfg,
                     std::optional<Model<T>> initial = std::nullopt) {
    cfg.validate();
    if (corpus.train_indices.empty())
        throw std::invalid_argument("train: corpus has no training samples");

    std::vector<BatchSample<T>> pool;
    pool.reserve(corpus.train_indices.size());
    for (std::size_t i : corpus.train_indices)
        pool.push_back(to_batch_sample(corpus.samples[i]));

    TrainResult<T> result;
    result.model = initial ? *initial
                           : init_model<T>(corpus.cfg.d_audio_in, corpus.cfg.d_visual_in,
                                           cfg.d_hidden, cfg.d_out, cfg.seed, cfg.initial_tau);

    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5eedf00dull);
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::size_t cursor = 0;
    auto next_batch = [&]() {
        std::vector<std::size_t> idx;
        idx.reserve(cfg.batch_size);
        for (std::size_t k = 0; k < cfg.batch_size; ++k) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), shuffle_rng);
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }
        return idx;
    };

    LossOptions<T> opt{cfg.eps, cfg.lambda, cfg.renormalize_global};
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<GradientStore<T>> micro;
        micro.reserve(cfg.accum_steps);
        StepRecord<T> rec;
        rec.step = step;
        rec.batch_hash = 0xcbf29ce484222325ull;
        for (std::size_t k = 0; k < cfg.accum_steps; ++k) {
            auto idx = next_batch();
            for (std::size_t i : idx) rec.batch_hash = fnv1a_extend(rec.batch_hash, i);
            std::vector<BatchSample<T>> batch;
            batch.reserve(idx.size());
            for (std::size_t i : idx) batch.push_back(pool[i]);
            auto ev = forward_loss(result.model, batch, cfg.objective, opt);
            rec.loss += ev.breakdown.total / T(cfg.accum_steps);
            rec.dense_part += ev.breakdown.dense_part / T(cfg.accum_steps);
            rec.global_part += ev.breakdown.global_part / T(cfg.accum_steps);
            micro.push_back(ev.backward());
        }
        rec.lr = lr_at(step, cfg.schedule);
        adam_step(result.model, accumulate(micro), result.opt, rec.lr);
        if (cfg.snapshot_every && (step + 1) % cfg.snapshot_every == 0 &&
            !corpus.val_indices.empty()) {
            std::vector<std::size_t> val = corpus.val_indices;
            if (val.size() > cfg.snapshot_max_samples) val.resize(cfg.snapshot_max_samples);
            auto split = encode_split(result.model, corpus, val, cfg.eps);
            auto kind = cfg.objective == Objective::global ? ClipSimilarityKind::global
                                                           : ClipSimilarityKind::dense;
            auto c = eval_clip_matrix(split, kind, cfg.eps, cfg.renormalize_global);
            rec.snapshot_r1 =
                report(ranks(c, Direction::audio_to_visual), Direction::audio_to_visual)
                    .recall_at.at(1);
        }
        result.log.push_back(rec);
    }
    return result;
}

template <typename T>
std::string step_log_line(const StepRecord<T>& r) {
    std::ostringstream os;
    os.precision(17);
    os << "step=" << r.step << " lr=" << r.lr << " loss=" << r.loss
       << " dense=" << r.dense_part << " global=" << r.global_part << " batch_hash=" << std::hex
       << r.batch_hash << std::dec;
    if (r.snapshot_r1 >= 0) os << " val_r1=" << r.snapshot_r1;
    return os.str();
}

// Checkpoint container: parameters, Adam moments, and the step counter,
// stored as named VESC records.
template <typename T>
void save_checkpoint(Model<T>& model, const OptimizerState<T>& opt, const std::string& path) {
    std::vector<CacheRecord<T>> records;
    Matrix<T> meta(1, 1);
    meta.data[0] = T(opt.step);
    records.push_back({meta, std::nullopt, "kind=meta;step=" + std::to_string(opt.step)});
    for (auto& [name, param] : model.params())
        records.push_back({*param, std::nullopt, "kind=param;name=" + name});
    for (const auto& [name, m] : opt.m)
        records.push_back({m, std::nullopt, "kind=adam_m;name=" + name});
    for (const auto& [name, v] : opt.v)
        records.push_back({v, std::nullopt, "kind=adam_v;name=" + name});
    write_cache(records, path);
}

template <typename T>
std::pair<Model<T>, OptimizerState<T>> load_checkpoint(const std::string& path) {
    auto records = read_cache<T>(path);
    Model<T> model;
    OptimizerState<T> opt;
    std::map<std::string, Matrix<T>> params;
    for (const auto& r : records) {
        auto kv = detail::parse_label(r.label);
        const std::string kind = kv["kind"];
        if (kind == "meta") opt.step = std::stoull(kv.at("step"));
        else if (kind == "param") params[kv.at("name")] = r.matrix;
        else if (kind == "adam_m") opt.m[kv.at("name")] = r.matrix;
        else if (kind == "adam_v") opt.v[kv.at("name")] = r.matrix;
        else throw CacheError("checkpoint has unknown record kind in " + path);
    }
    for (auto& [name, param] : model.params()) {
        auto it = params.find(name);
        if (it == params.end())
            throw CacheError("checkpoint missing parameter " + name + " in " + path);
        *param = it->second;
    }
    return {std::move(model), std::move(opt)};
}

}  // namespace ves
