// ves: corpus generation, training, retrieval evaluation, heatmap export,
// gradient checking, and the dense/global/hybrid comparison experiment.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error,
// 3 verification failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ves/config.hpp"
#include "ves/eval.hpp"
#include "ves/localization.hpp"
#include "ves/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir;
};

ves::KvConfig load_config(const CommonArgs& args) {
    ves::KvConfig kv;
    if (!args.config_path.empty()) kv = ves::KvConfig::from_file(args.config_path);
    for (const auto& pair : args.sets) kv.set_pair(pair);
    return kv;
}

std::string out_dir_for(const CommonArgs& args) {
    if (!args.out_dir.empty()) return args.out_dir;
    if (const char* env = std::getenv("VES_OUT_DIR")) return env;
    return "";
}

std::string resolve(const std::string& path, const std::string& out_dir) {
    if (path.empty() || out_dir.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(out_dir) / path).string();
}

void write_text(const std::string& path, const std::string& text) {
    if (const auto dir = fs::path(path).parent_path(); !dir.empty())
        fs::create_directories(dir);
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::string precision_of(const ves::KvConfig& kv) {
    const std::string p = kv.get_string("precision", "f32");
    if (p != "f32" && p != "f64")
        throw std::invalid_argument("config field precision must be f32 or f64, got " + p);
    return p;
}

template <typename T>
int run_gen_data(const ves::KvConfig& kv, const std::string& out_dir) {
    auto cfg = ves::corpus_config_from(kv);
    const std::string corpus_path = resolve(kv.require_string("corpus_path"), out_dir);
    const std::string manifest_path =
        resolve(kv.get_string("manifest_path", corpus_path + ".manifest.txt"), out_dir);
    auto corpus = ves::gen_corpus<T>(cfg);
    if (const auto dir = fs::path(corpus_path).parent_path(); !dir.empty())
        fs::create_directories(dir);
    ves::save_corpus(corpus, corpus_path);
    write_text(manifest_path, ves::corpus_manifest(corpus));
    std::cout << "wrote " << corpus_path << " (" << corpus.samples.size() << " samples, "
              << corpus.train_indices.size() << " train / " << corpus.val_indices.size()
              << " val)\n";
    return 0;
}

template <typename T>
int run_train(const ves::KvConfig& kv, const std::string& out_dir) {
    auto cfg = ves::train_config_from<T>(kv);
    const std::string corpus_path = resolve(kv.require_string("corpus_path"), out_dir);
    const std::string ckpt_path = resolve(kv.require_string("checkpoint_path"), out_dir);
    const std::string log_path =
        resolve(kv.get_string("loss_log_path", ckpt_path + ".log"), out_dir);
    auto corpus = ves::load_corpus<T>(corpus_path);
    auto result = ves::train(corpus, cfg);
    std::string log;
    for (const auto& rec : result.log) log += ves::step_log_line(rec) + "\n";
    if (const auto dir = fs::path(ckpt_path).parent_path(); !dir.empty())
        fs::create_directories(dir);
    ves::save_checkpoint(result.model, result.opt, ckpt_path);
    write_text(log_path, log);
    std::cout << "trained " << ves::objective_name(cfg.objective) << " for " << cfg.steps
              << " steps; checkpoint " << ckpt_path << "\n";
    return 0;
}

ves::ClipSimilarityKind similarity_kind_for(const ves::KvConfig& kv) {
    std::string sim = kv.get_string("similarity", "");
    if (sim.empty()) {
        const std::string obj = kv.get_string("objective", "dense");
        sim = obj == "global" ? "global" : (obj == "dense_sym" ? "dense_sym" : "dense");
    }
    if (sim == "dense") return ves::ClipSimilarityKind::dense;
    if (sim == "global") return ves::ClipSimilarityKind::global;
    if (sim == "dense_sym") return ves::ClipSimilarityKind::dense_sym;
    throw std::invalid_argument("config field similarity must be dense, global, or dense_sym");
}

template <typename T>
int run_eval(const ves::KvConfig& kv, const std::string& out_dir) {
    const std::string corpus_path = resolve(kv.require_string("corpus_path"), out_dir);
    const std::string ckpt_path = resolve(kv.require_string("checkpoint_path"), out_dir);
    const std::string report_dir = resolve(kv.get_string("report_dir", "reports"), out_dir);
    const std::string split_name = kv.get_string("split", "val");
    if (split_name != "val" && split_name != "train")
        throw std::invalid_argument("config field split must be val or train");
    const T eps = T(kv.get_double("eps", 1e-6));
    const auto kind = similarity_kind_for(kv);

    auto corpus = ves::load_corpus<T>(corpus_path);
    auto [model, opt] = ves::load_checkpoint<T>(ckpt_path);
    const auto& indices =
        split_name == "val" ? corpus.val_indices : corpus.train_indices;
    if (indices.empty())
        throw std::invalid_argument("eval: split '" + split_name + "' is empty");

    auto split = ves::encode_split(model, corpus, indices, eps);
    auto c = ves::eval_clip_matrix(split, kind, eps, kv.get_bool("renormalize_global", true));

    std::string table = ves::report_table_header() + "\n";
    for (auto dir : {ves::Direction::audio_to_visual, ves::Direction::visual_to_audio}) {
        auto rep = ves::report(ves::ranks(c, dir), dir);
        std::string kvtext = ves::report_to_kv(rep);
        if (kv.has("baseline_r1")) {
            kvtext += "relative_r1_improvement=" +
                      std::to_string(ves::relative_improvement(
                          rep.recall_at.at(1), kv.get_double("baseline_r1", 0))) +
                      "\n";
        }
        write_text(report_dir + "/report_" + ves::direction_name(dir) + ".txt", kvtext);
        table += ves::report_table_row("checkpoint", rep) + "\n";
    }
    write_text(report_dir + "/table.tsv", table);
    std::cout << "wrote reports to " << report_dir << "\n";
    return 0;
}

template <typename T>
int run_heatmaps(const ves::KvConfig& kv, const std::string& out_dir) {
    const std::string corpus_path = resolve(kv.require_string("corpus_path"), out_dir);
    const std::string ckpt_path = resolve(kv.require_string("checkpoint_path"), out_dir);
    const std::string heatmap_dir = resolve(kv.get_string("heatmap_dir", "heatmaps"), out_dir);
    const std::size_t upscale = std::size_t(kv.get_int("upscale", 16));
    const T eps = T(kv.get_double("eps", 1e-6));

    auto corpus = ves::load_corpus<T>(corpus_path);
    auto [model, opt] = ves::load_checkpoint<T>(ckpt_path);

    std::vector<std::size_t> ids;
    for (int v : ves::detail::split_ints(kv.require_string("samples"))) {
        if (v < 0 || std::size_t(v) >= corpus.samples.size())
            throw std::invalid_argument("invalid sample id " + std::to_string(v) +
                                        " (corpus has " +
                                        std::to_string(corpus.samples.size()) + " samples)");
        ids.push_back(std::size_t(v));
    }
    if (ids.empty()) throw std::invalid_argument("config field samples lists no ids");

    fs::create_directories(heatmap_dir);
    std::string manifest;
    const std::size_t g = corpus.cfg.grid_side;
    for (std::size_t id : ids) {
        const auto& s = corpus.samples[id];
        auto audio = ves::encode_tokens(ves::downsample_audio(s.audio_raw), model.audio_head,
                                        ves::downsample_mask(s.audio_mask_raw), eps);
        auto visual =
            ves::encode_tokens(s.visual_raw, model.visual_head, std::nullopt, eps);
        auto vol = ves::similarity_volume(audio, visual);
        auto labels = ves::downsample_labels(s.audio_labels_raw);
        for (std::size_t t = 0; t < labels.size(); ++t) {
            if (labels[t] < 0 || !(*audio.mask)[t]) continue;
            auto hm = ves::token_heatmap(vol, t, g);
            const std::string name = "sample" + std::to_string(id) + "_token" +
                                     std::to_string(t) + "_concept" +
                                     std::to_string(labels[t]) + ".pgm";
            ves::write_pgm(hm, heatmap_dir + "/" + name, upscale);
            manifest += "sample=" + std::to_string(id) + " token=" + std::to_string(t) +
                        " concept=" + std::to_string(labels[t]) + " path=" + name +
                        " degenerate=" + (hm.degenerate ? "1" : "0") + "\n";
        }
    }
    auto scores = ves::eval_localization(model, corpus, ids, eps);
    manifest = "pointing_accuracy=" + std::to_string(scores.pointing_accuracy) +
               "\nmean_mass_inside=" + std::to_string(scores.mean_mass_inside) + "\n" + manifest;
    write_text(heatmap_dir + "/manifest.txt", manifest);
    std::cout << "wrote heatmaps to " << heatmap_dir << "\n";
    return 0;
}

int run_gradcheck(const ves::KvConfig& kv, bool corrupt) {
    using T = double;  // finite differences always run in 64-bit mode
    std::mt19937_64 rng(std::uint64_t(kv.get_int("seed", 7)));
    std::normal_distribution<T> gauss(0.0, 1.0);
    const std::size_t B = 3, Nv = 9, D = 6;
    std::vector<ves::BatchSample<T>> batch;
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t Na = 4 + b % 2;
        ves::BatchSample<T> s;
        s.audio_tokens = ves::Matrix<T>(Na, D);
        for (T& v : s.audio_tokens.data) v = gauss(rng);
        s.audio_mask = ves::MaskVector(Na, 1);
        s.audio_mask.bits[Na - 1] = 0;
        s.visual_tokens = ves::Matrix<T>(Nv, D);
        for (T& v : s.visual_tokens.data) v = gauss(rng);
        batch.push_back(std::move(s));
    }
    auto model = ves::init_model<T>(D, D, 8, 6, std::uint64_t(kv.get_int("seed", 7)));
    ves::LossOptions<T> opt;
    opt.lambda = T(kv.get_double("lambda", 0.7));

    bool all_pass = true;
    for (auto obj : {ves::Objective::dense, ves::Objective::global, ves::Objective::hybrid,
                     ves::Objective::dense_sym}) {
        auto report = ves::grad_check(model, batch, obj, opt,
                                      std::uint64_t(kv.get_int("seed", 7)) + 1);
        double worst = report.worst_rel_error;
        if (corrupt) worst += 1.0;  // negative-control hook
        const bool pass = worst <= 1e-4;
        all_pass = all_pass && pass;
        std::cout << (pass ? "PASS" : "FAIL") << " objective=" << ves::objective_name(obj)
                  << " worst_rel_error=" << worst << "\n";
    }
    return all_pass ? 0 : 3;
}

template <typename T>
int run_compare(const ves::KvConfig& kv, const std::string& out_dir) {
    auto train_cfg = ves::train_config_from<T>(kv);
    const std::string corpus_path = resolve(kv.require_string("corpus_path"), out_dir);
    const std::string report_dir = resolve(kv.get_string("report_dir", "compare"), out_dir);
    const T eps = train_cfg.eps;

    ves::Corpus<T> corpus;
    if (fs::exists(corpus_path)) {
        corpus = ves::load_corpus<T>(corpus_path);
    } else {
        corpus = ves::gen_corpus<T>(ves::corpus_config_from(kv));
        if (const auto dir = fs::path(corpus_path).parent_path(); !dir.empty())
            fs::create_directories(dir);
        ves::save_corpus(corpus, corpus_path);
    }
    if (corpus.val_indices.empty())
        throw std::invalid_argument("compare: corpus has no validation split");

    fs::create_directories(report_dir);
    // shared init isolates the aggregation function
    auto init = ves::init_model<T>(corpus.cfg.d_audio_in, corpus.cfg.d_visual_in,
                                   train_cfg.d_hidden, train_cfg.d_out, train_cfg.seed,
                                   train_cfg.initial_tau);

    struct Row {
        ves::Objective obj;
        ves::ClipSimilarityKind kind;
        double r1_a2v = 0;
        ves::LocalizationScores loc;
    };
    std::vector<Row> rows;
    std::string table = ves::report_table_header() + "\n";
    std::string loc_table = "objective\tpointing_accuracy\tmean_mass_inside\ttokens\n";

    for (auto obj : {ves::Objective::dense, ves::Objective::global, ves::Objective::hybrid,
                     ves::Objective::dense_sym}) {
        auto cfg = train_cfg;
        cfg.objective = obj;
        auto result = ves::train(corpus, cfg, std::optional<ves::Model<T>>(init));
        std::string log;
        for (const auto& rec : result.log) log += ves::step_log_line(rec) + "\n";
        const std::string name = ves::objective_name(obj);
        write_text(report_dir + "/" + name + ".log", log);
        ves::save_checkpoint(result.model, result.opt, report_dir + "/" + name + ".ckpt");

        const auto kind = obj == ves::Objective::global ? ves::ClipSimilarityKind::global
                          : obj == ves::Objective::dense_sym ? ves::ClipSimilarityKind::dense_sym
                                                             : ves::ClipSimilarityKind::dense;
        auto split = ves::encode_split(result.model, corpus, corpus.val_indices, eps);
        auto c = ves::eval_clip_matrix(split, kind, eps, cfg.renormalize_global);
        Row row{obj, kind, 0, {}};
        for (auto dir : {ves::Direction::audio_to_visual, ves::Direction::visual_to_audio}) {
            auto rep = ves::report(ves::ranks(c, dir), dir);
            if (dir == ves::Direction::audio_to_visual) row.r1_a2v = rep.recall_at.at(1);
            table += ves::report_table_row(name, rep) + "\n";
        }
        row.loc = ves::eval_localization(result.model, corpus, corpus.val_indices, eps);
        loc_table += name + "\t" + std::to_string(row.loc.pointing_accuracy) + "\t" +
                     std::to_string(row.loc.mean_mass_inside) + "\t" +
                     std::to_string(row.loc.tokens_scored) + "\n";
        rows.push_back(row);
    }

    auto rand_rep = ves::random_baseline(corpus.val_indices.size(),
                                         std::size_t(kv.get_int("baseline_trials", 20)),
                                         train_cfg.seed);
    table += ves::report_table_row("random", rand_rep) + "\n";

    std::string summary;
    summary += "relative_r1_improvement_dense_vs_global=" +
               (rows[1].r1_a2v > 0
                    ? std::to_string(ves::relative_improvement(rows[0].r1_a2v, rows[1].r1_a2v))
                    : std::string("undefined (global R@1 is zero)")) +
               "\n";
    summary += "psi_ablation_pointing_delta=" +
               std::to_string(rows[3].loc.pointing_accuracy - rows[0].loc.pointing_accuracy) +
               "\n";
    write_text(report_dir + "/compare_table.tsv", table);
    write_text(report_dir + "/localization.tsv", loc_table);
    write_text(report_dir + "/summary.txt", summary);
    std::cout << "wrote comparison to " << report_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrastive aggregation trainer and evaluator"};
    app.require_subcommand(1);

    CommonArgs args;
    bool corrupt = false;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", args.config_path, "key=value config file");
        cmd->add_option("--set", args.sets, "override a config entry, key=value")
            ->take_all();
        cmd->add_option("--out-dir", args.out_dir,
                        "base directory for relative output paths (or VES_OUT_DIR)");
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
    auto* train_cmd = app.add_subcommand("train", "train projection heads");
    auto* eval_cmd = app.add_subcommand("eval", "retrieval evaluation of a checkpoint");
    auto* heat = app.add_subcommand("heatmaps", "export per-token localization heatmaps");
    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    grad->add_flag("--corrupt", corrupt, "negative-control hook: force a failing comparison");
    auto* compare = app.add_subcommand("compare", "train and compare all objectives");
    for (auto* cmd : {gen, train_cmd, eval_cmd, heat, grad, compare}) add_common(cmd);

    CLI11_PARSE(app, argc, argv);

    try {
        const auto kv = load_config(args);
        const std::string out_dir = out_dir_for(args);
        const bool f64 = precision_of(kv) == "f64";
        if (gen->parsed())
            return f64 ? run_gen_data<double>(kv, out_dir) : run_gen_data<float>(kv, out_dir);
        if (train_cmd->parsed())
            return f64 ? run_train<double>(kv, out_dir) : run_train<float>(kv, out_dir);
        if (eval_cmd->parsed())
            return f64 ? run_eval<double>(kv, out_dir) : run_eval<float>(kv, out_dir);
        if (heat->parsed())
            return f64 ? run_heatmaps<double>(kv, out_dir) : run_heatmaps<float>(kv, out_dir);
        if (grad->parsed()) return run_gradcheck(kv, corrupt);
        if (compare->parsed())
            return f64 ? run_compare<double>(kv, out_dir) : run_compare<float>(kv, out_dir);
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
