#pragma once

// Contrastive objectives: symmetric InfoNCE with learnable temperature over
// the dense, global, or hybrid clip similarity matrix, with exact gradients
// through the whole pipeline and a finite-difference checker.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ves/autograd.hpp"
#include "ves/model.hpp"

namespace ves {

template <typename T>
struct Temperature {
    T log_value;

    T value() const { return std::exp(log_value); }

    void clamp() {
        const T max_log = std::log(T(kTauMax));
        if (log_value > max_log) log_value = max_log;
    }
};

template <typename T>
struct LossBreakdown {
    T total = T(0);
    T dense_part = T(0);
    T global_part = T(0);
    T lambda = T(1);
};

template <typename T>
struct GradientStore {
    std::map<std::string, Matrix<T>> grads;

    const Matrix<T>& at(const std::string& name) const {
        auto it = grads.find(name);
        if (it == grads.end())
            throw std::invalid_argument("GradientStore: no gradient named " + name);
        return it->second;
    }
};

enum class Objective { dense, global, hybrid, dense_sym };

inline const char* objective_name(Objective o) {
    switch (o) {
        case Objective::dense: return "dense";
        case Objective::global: return "global";
        case Objective::hybrid: return "hybrid";
        case Objective::dense_sym: return "dense_sym";
    }
    return "?";
}

inline Objective objective_from_name(const std::string& s) {
    if (s == "dense") return Objective::dense;
    if (s == "global") return Objective::global;
    if (s == "hybrid") return Objective::hybrid;
    if (s == "dense_sym") return Objective::dense_sym;
    throw std::invalid_argument("unknown objective: " + s);
}

// One training sample as seen by the loss: post-downsampling audio tokens
// plus mask, raw visual patch tokens.
template <typename T>
struct BatchSample {
    Matrix<T> audio_tokens;
    MaskVector audio_mask;
    Matrix<T> visual_tokens;
};

// Non-tape InfoNCE, used by evaluation and as one side of the oracle pair.
template <typename T>
T infonce(const ClipSimilarityMatrix<T>& c, const Temperature<T>& tau) {
    const Matrix<T>& C = c.values;
    if (C.rows != C.cols || C.rows == 0)
        throw std::invalid_argument("infonce: clip matrix must be square and non-empty, got " +
                                    C.shape_str());
    const std::size_t B = C.rows;
    const T t = tau.value();
    T loss = T(0);
    std::vector<T> buf(B);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t k = 0; k < B; ++k) buf[k] = t * C(b, k);
        loss -= buf[b] - log_sum_exp(buf.data(), B);
        for (std::size_t k = 0; k < B; ++k) buf[k] = t * C(k, b);
        loss -= buf[b] - log_sum_exp(buf.data(), B);
    }
    return loss / T(2 * B);
}

template <typename T>
struct LossOptions {
    T eps = T(1e-6);
    T lambda = T(0.7);
    bool renormalize_global = true;
};

// A completed forward evaluation. Holds the tape so backward() can run.
template <typename T>
class LossEvaluation {
public:
    LossBreakdown<T> breakdown;

    GradientStore<T> backward() {
        if (done_) throw std::invalid_argument("backward: already consumed");
        done_ = true;
        tape_.backward_from(loss_id_);
        GradientStore<T> out;
        for (const auto& [name, id] : param_ids_) out.grads[name] = tape_.grad(id);
        for (std::size_t i = 0; i < audio_ids_.size(); ++i)
            out.grads["audio_tokens[" + std::to_string(i) + "]"] = tape_.grad(audio_ids_[i]);
        for (std::size_t i = 0; i < visual_ids_.size(); ++i)
            out.grads["visual_tokens[" + std::to_string(i) + "]"] = tape_.grad(visual_ids_[i]);
        return out;
    }

private:
    template <typename U>
    friend LossEvaluation<U> forward_loss(const Model<U>&, const std::vector<BatchSample<U>>&,
                                          Objective, const LossOptions<U>&);

    Tape<T> tape_;
    typename Tape<T>::VarId loss_id_ = 0;
    std::vector<std::pair<std::string, typename Tape<T>::VarId>> param_ids_;
    std::vector<typename Tape<T>::VarId> audio_ids_, visual_ids_;
    bool done_ = false;
};

template <typename T>
LossEvaluation<T> forward_loss(const Model<T>& model, const std::vector<BatchSample<T>>& batch,
                               Objective obj, const LossOptions<T>& opt) {
    if (batch.empty())
        throw std::invalid_argument("forward_loss: empty batch");
    if (obj == Objective::hybrid && !(opt.lambda >= T(0) && opt.lambda <= T(1)))
        throw std::invalid_argument("forward_loss: lambda must lie in [0,1]");
    for (const auto& s : batch)
        if (s.audio_mask.length() != s.audio_tokens.rows)
            throw std::invalid_argument("forward_loss: audio mask length mismatch");

    LossEvaluation<T> ev;
    Tape<T>& tp = ev.tape_;
    using Var = typename Tape<T>::VarId;

    struct HeadVars { Var w1, b1, ln_scale, ln_shift, w2, b2; };
    auto lift_head = [&](const std::string& prefix, const ProjectionHead<T>& h) {
        HeadVars v{tp.leaf(h.w1), tp.leaf(h.b1), tp.leaf(h.ln_scale),
                   tp.leaf(h.ln_shift), tp.leaf(h.w2), tp.leaf(h.b2)};
        ev.param_ids_.push_back({prefix + ".w1", v.w1});
        ev.param_ids_.push_back({prefix + ".b1", v.b1});
        ev.param_ids_.push_back({prefix + ".ln_scale", v.ln_scale});
        ev.param_ids_.push_back({prefix + ".ln_shift", v.ln_shift});
        ev.param_ids_.push_back({prefix + ".w2", v.w2});
        ev.param_ids_.push_back({prefix + ".b2", v.b2});
        return v;
    };
    HeadVars ah = lift_head("audio_head", model.audio_head);
    HeadVars vh = lift_head("visual_head", model.visual_head);
    Var log_tau = tp.leaf(model.log_tau);
    ev.param_ids_.push_back({"log_tau", log_tau});

    auto project_on_tape = [&](Var tokens, const HeadVars& h) {
        Var x = tp.add_row_vector(tp.matmul(tokens, h.w1), h.b1);
        x = tp.layer_norm_rows(x, h.ln_scale, h.ln_shift, T(kLayerNormEps));
        x = tp.add_row_vector(tp.matmul(x, h.w2), h.b2);
        return tp.l2_normalize_rows(x, opt.eps);
    };

    const std::size_t B = batch.size();
    std::vector<Var> audio_emb(B), visual_emb(B);
    for (std::size_t b = 0; b < B; ++b) {
        ev.audio_ids_.push_back(tp.leaf(batch[b].audio_tokens));
        ev.visual_ids_.push_back(tp.leaf(batch[b].visual_tokens));
        audio_emb[b] = project_on_tape(ev.audio_ids_[b], ah);
        visual_emb[b] = project_on_tape(ev.visual_ids_[b], vh);
    }

    auto dense_cells = [&](bool symmetric) {
        std::vector<Var> cells(B * B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t b2 = 0; b2 < B; ++b2) {
                Var s = tp.matmul_nt(audio_emb[b], visual_emb[b2]);
                Var p = tp.phi(s, batch[b].audio_mask, opt.eps);
                cells[b * B + b2] =
                    symmetric ? tp.lincomb(p, tp.psi(s), T(0.5), T(0.5)) : p;
            }
        return cells;
    };
    auto global_cells = [&]() {
        std::vector<Var> abar(B), vbar(B);
        for (std::size_t b = 0; b < B; ++b) {
            abar[b] = tp.masked_mean_rows(audio_emb[b], batch[b].audio_mask, opt.eps);
            vbar[b] = tp.mean_rows(visual_emb[b]);
            if (opt.renormalize_global) {
                abar[b] = tp.l2_normalize_rows(abar[b], opt.eps);
                vbar[b] = tp.l2_normalize_rows(vbar[b], opt.eps);
            }
        }
        std::vector<Var> cells(B * B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t b2 = 0; b2 < B; ++b2)
                cells[b * B + b2] = tp.dot(abar[b], vbar[b2]);
        return cells;
    };

    switch (obj) {
        case Objective::dense:
        case Objective::dense_sym: {
            ev.loss_id_ = tp.infonce(dense_cells(obj == Objective::dense_sym), B, log_tau);
            ev.breakdown = {tp.scalar(ev.loss_id_), tp.scalar(ev.loss_id_), T(0), T(1)};
            break;
        }
        case Objective::global: {
            ev.loss_id_ = tp.infonce(global_cells(), B, log_tau);
            ev.breakdown = {tp.scalar(ev.loss_id_), T(0), tp.scalar(ev.loss_id_), T(0)};
            break;
        }
        case Objective::hybrid: {
            Var ld = tp.infonce(dense_cells(false), B, log_tau);
            Var lg = tp.infonce(global_cells(), B, log_tau);
            ev.loss_id_ = tp.lincomb(ld, lg, opt.lambda, T(1) - opt.lambda);
            ev.breakdown = {tp.scalar(ev.loss_id_), tp.scalar(ld), tp.scalar(lg), opt.lambda};
            break;
        }
    }
    return ev;
}

template <typename T>
T loss_value(const Model<T>& model, const std::vector<BatchSample<T>>& batch, Objective obj,
             const LossOptions<T>& opt) {
    return forward_loss(model, batch, obj, opt).breakdown.total;
}

template <typename T>
LossBreakdown<T> loss_dense(const Model<T>& model, const std::vector<BatchSample<T>>& batch,
                            const LossOptions<T>& opt) {
    return forward_loss(model, batch, Objective::dense, opt).breakdown;
}

template <typename T>
LossBreakdown<T> loss_global(const Model<T>& model, const std::vector<BatchSample<T>>& batch,
                             const LossOptions<T>& opt) {
    return forward_loss(model, batch, Objective::global, opt).breakdown;
}

template <typename T>
LossBreakdown<T> loss_hybrid(const Model<T>& model, const std::vector<BatchSample<T>>& batch,
                             const LossOptions<T>& opt) {
    return forward_loss(model, batch, Objective::hybrid, opt).breakdown;
}

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0;
    std::size_t coords_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst_rel_error = 0;
};

// Central differences against the analytic backward. Checks every
// coordinate up to max_coords per parameter, then a seeded subsample.
template <typename T>
GradCheckReport grad_check(Model<T> model, const std::vector<BatchSample<T>>& batch,
                           Objective obj, const LossOptions<T>& opt, std::uint64_t seed,
                           T h = T(1e-5), std::size_t max_coords = 200) {
    static_assert(sizeof(T) == 8, "grad_check requires the 64-bit mode");
    auto ev = forward_loss(model, batch, obj, opt);
    GradientStore<T> analytic = ev.backward();

    GradCheckReport report;
    std::mt19937_64 rng(seed);
    for (auto& [name, param] : model.params()) {
        const Matrix<T>& ga = analytic.at(name);
        std::vector<std::size_t> coords(param->size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (coords.size() > max_coords) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(max_coords);
        }
        GradCheckEntry entry{name, 0, coords.size()};
        for (std::size_t c : coords) {
            const T orig = param->data[c];
            param->data[c] = orig + h;
            const T up = loss_value(model, batch, obj, opt);
            param->data[c] = orig - h;
            const T down = loss_value(model, batch, obj, opt);
            param->data[c] = orig;
            const T numeric = (up - down) / (2 * h);
            const T a = ga.data[c];
            const double rel = std::abs(double(a - numeric)) /
                               std::max({1.0, std::abs(double(a)), std::abs(double(numeric))});
            entry.max_rel_error = std::max(entry.max_rel_error, rel);
        }
        report.worst_rel_error = std::max(report.worst_rel_error, entry.max_rel_error);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace ves
