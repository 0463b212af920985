#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dpmil/config.hpp"
#include "dpmil/coteach.hpp"
#include "dpmil/errors.hpp"
#include "dpmil/fusion.hpp"
#include "dpmil/lof.hpp"
#include "dpmil/metrics.hpp"
#include "dpmil/miltrain.hpp"
#include "dpmil/synthdata.hpp"
#include "dpmil/text_io.hpp"

namespace dpmil {

namespace fs = std::filesystem;

// DPMIL_THREADS caps parallelism; tasks are independent and their outputs are
// merged in index order, so the thread count never changes results.
inline std::size_t resolve_threads(std::size_t task_count) {
    if (task_count <= 1) return 1;
    if (const char* env = std::getenv("DPMIL_THREADS")) {
        const std::string s(env);
        const std::size_t v = static_cast<std::size_t>(parse_u64(s, "DPMIL_THREADS"));
        return std::clamp<std::size_t>(v, 1, task_count);
    }
    const std::size_t hw = std::thread::hardware_concurrency();
    return std::clamp<std::size_t>(hw == 0 ? 1 : hw, 1, std::min<std::size_t>(4, task_count));
}

template <typename F>
inline void run_tasks(std::size_t count, std::size_t threads, F&& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t t = 0; t < std::min(threads, count); ++t) {
        workers.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);
}

// Append-only run log: every produced artifact with a content checksum.
class Manifest {
public:
    explicit Manifest(fs::path out_dir) : path_(out_dir / "run-manifest.txt") {}

    void record(const std::string& stage, const fs::path& file) const {
        std::ofstream out(path_, std::ios::app);
        if (!out) throw DataError("cannot append to manifest: " + path_.string());
        char hex[17];
        std::snprintf(hex, sizeof(hex), "%016llx",
                      static_cast<unsigned long long>(file_checksum(file)));
        out << stage << ' ' << file.filename().string() << ' ' << hex << '\n';
    }

private:
    fs::path path_;
};

struct ArtifactPaths {
    fs::path out;

    fs::path dataset() const { return out / "dataset.txt"; }
    fs::path train() const { return out / "train.txt"; }
    fs::path val() const { return out / "val.txt"; }
    fs::path coteach_a() const { return out / "coteach-a.txt"; }
    fs::path coteach_b() const { return out / "coteach-b.txt"; }
    fs::path coteach_chosen() const { return out / "coteach-chosen.txt"; }
    fs::path candidates() const { return out / "candidates.txt"; }
    fs::path kept_candidates() const { return out / "kept-candidates.txt"; }
    fs::path denoise_report() const { return out / "denoise-report.csv"; }
    fs::path finetuned() const { return out / "finetuned.txt"; }
    fs::path predictions() const { return out / "predictions.csv"; }
    fs::path binary_model(std::size_t c) const {
        return out / ("binary-" + std::to_string(c) + ".txt");
    }
    fs::path fusion_weights() const { return out / "fusion.txt"; }
    fs::path fused_predictions() const { return out / "fused-predictions.csv"; }
    fs::path metrics() const { return out / "metrics.csv"; }
    fs::path ablation() const { return out / "ablation.csv"; }
};

inline void require_artifact(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path))
        throw DataError("missing artifact " + path.string() + "; run `dpmil " + producer +
                        "` first");
}

inline void stage_gen(const RunConfig& cfg, const ArtifactPaths& paths) {
    GenConfig gen = cfg.gen;
    gen.seed = derive_seed(cfg.seed, "stage/gen");
    const Dataset dataset = generate(gen);
    fs::create_directories(paths.out);
    write_dataset(dataset, paths.dataset());
    Manifest(paths.out).record("gen", paths.dataset());
    std::cout << "[gen] wrote " << paths.dataset().string() << " (" << dataset.size() << " bags)\n";
}

inline void stage_split(const RunConfig& cfg, const ArtifactPaths& paths) {
    require_artifact(paths.dataset(), "gen");
    const Dataset dataset = read_dataset(paths.dataset());
    auto [train, val] = split(dataset, cfg.split_ratio, derive_seed(cfg.seed, "stage/split"));
    write_dataset(train, paths.train());
    write_dataset(val, paths.val());
    const Manifest manifest(paths.out);
    manifest.record("split", paths.train());
    manifest.record("split", paths.val());
    std::cout << "[split] train " << train.size() << " bags, val " << val.size() << " bags\n";
}

inline void stage_coteach(const RunConfig& cfg, const ArtifactPaths& paths) {
    require_artifact(paths.train(), "split");
    require_artifact(paths.val(), "split");
    const Dataset train = read_dataset(paths.train());
    const Dataset val = read_dataset(paths.val());
    const CoteachConfig cc = cfg.coteach_config(derive_seed(cfg.seed, "stage/coteach"));
    const CoteachResult result = train_coteach(as_views(train), as_views(val), cc);
    save_model(result.model_a, paths.coteach_a());
    save_model(result.model_b, paths.coteach_b());
    save_model(result.chosen_model(), paths.coteach_chosen());
    write_candidates(result.candidates, paths.candidates());
    const Manifest manifest(paths.out);
    manifest.record("coteach", paths.coteach_a());
    manifest.record("coteach", paths.coteach_b());
    manifest.record("coteach", paths.coteach_chosen());
    manifest.record("coteach", paths.candidates());
    std::size_t n_candidates = 0;
    for (const auto& cls : result.candidates) n_candidates += cls.size();
    std::cout << "[coteach] chose model " << (result.chosen == 0 ? 'a' : 'b') << " (F1 a="
              << format_double(result.f1_a) << ", b=" << format_double(result.f1_b) << "), "
              << n_candidates << " candidate patches\n";
}

inline void stage_denoise(const RunConfig& cfg, const ArtifactPaths& paths) {
    require_artifact(paths.candidates(), "coteach");
    const auto candidates = read_candidates(paths.candidates(), kNumSubtypes);
    LofParams params = cfg.lof;
    params.seed = derive_seed(cfg.seed, "stage/denoise");
    auto [kept, report] = filter_all_classes(candidates, params);
    write_candidates(kept, paths.kept_candidates());
    write_denoise_report(report, paths.denoise_report());
    const Manifest manifest(paths.out);
    manifest.record("denoise", paths.kept_candidates());
    manifest.record("denoise", paths.denoise_report());
    for (const auto& row : report.rows) {
        if (row.pass_through)
            std::cerr << "[denoise] warning: class " << row.class_ordinal << " has only "
                      << row.input_count << " candidates (<= k); passed through unfiltered\n";
        std::cout << "[denoise] class " << row.class_ordinal << ": kept " << row.kept << "/"
                  << row.capped_count << "\n";
    }
}

inline void stage_finetune(const RunConfig& cfg, const ArtifactPaths& paths) {
    require_artifact(paths.train(), "split");
    require_artifact(paths.val(), "split");
    require_artifact(paths.kept_candidates(), "denoise");
    require_artifact(paths.coteach_chosen(), "coteach");
    const Dataset train = read_dataset(paths.train());
    const Dataset val = read_dataset(paths.val());
    const auto kept = read_candidates(paths.kept_candidates(), kNumSubtypes);
    const MlpModel init = load_model(paths.coteach_chosen());
    auto [mil_bags, skipped] = build_mil_bags(as_views(train), kept);
    if (skipped > 0)
        std::cerr << "[finetune] warning: " << skipped
                  << " bags had no surviving discriminative patches\n";
    const MilConfig mc = cfg.mil_config(derive_seed(cfg.seed, "stage/finetune"), cfg.mil_alpha);
    const FinetuneResult result = finetune_two_stage(init, mil_bags, as_views(val), mc);
    save_model(result.model, paths.finetuned());

    std::vector<SlidePrediction> preds;
    std::vector<std::size_t> truths;
    for (const auto& bag : val) {
        preds.push_back(predict_slide(result.model, bag));
        truths.push_back(ordinal(bag.label));
    }
    write_predictions(preds, truths, paths.predictions());
    const Manifest manifest(paths.out);
    manifest.record("finetune", paths.finetuned());
    manifest.record("finetune", paths.predictions());
    std::cout << "[finetune] alpha " << format_double(cfg.mil_alpha) << ", val F1 "
              << format_double(result.val_f1_history.empty() ? 0.0 : result.val_f1_history.back())
              << "\n";
}

inline void stage_fuse(const RunConfig& cfg, const ArtifactPaths& paths) {
    require_artifact(paths.train(), "split");
    require_artifact(paths.val(), "split");
    const Dataset train = read_dataset(paths.train());
    const Dataset val = read_dataset(paths.val());

    std::array<BinaryTrainResult, kNumSubtypes> results;
    const std::size_t threads = resolve_threads(kNumSubtypes);
    run_tasks(kNumSubtypes, threads, [&](std::size_t c) {
        results[c] = train_binary(subtype_from_ordinal(c), train, val, cfg.binary_config(),
                                  derive_seed(cfg.seed, "stage/fuse", c));
    });

    std::array<BinaryModel, kNumSubtypes> models;
    const Manifest manifest(paths.out);
    for (std::size_t c = 0; c < kNumSubtypes; ++c) {
        models[c] = results[c].binary;
        save_model(models[c].model, paths.binary_model(c));
        manifest.record("fuse", paths.binary_model(c));
        std::cout << "[fuse] binary " << subtype_name(subtype_from_ordinal(c)) << " val F1 "
                  << format_double(results[c].val_f1) << "\n";
    }

    std::vector<std::array<double, kNumSubtypes>> confidences;
    std::vector<std::size_t> truths;
    for (const auto& bag : val) {
        confidences.push_back(binary_slide_confidences(models, bag));
        truths.push_back(ordinal(bag.label));
    }
    const GridSearchResult grid =
        grid_search(confidences, truths, cfg.fusion_grid_step, cfg.fusion_objective);
    write_fusion_weights(grid.weights, paths.fusion_weights());
    manifest.record("fuse", paths.fusion_weights());

    std::vector<SlidePrediction> preds;
    for (std::size_t i = 0; i < val.size(); ++i) {
        SlidePrediction p;
        p.bag_id = val[i].bag_id;
        double sum = 0.0;
        p.confidence.resize(kNumSubtypes);
        for (std::size_t c = 0; c < kNumSubtypes; ++c) {
            p.confidence[c] = grid.weights.w[c] * confidences[i][c];
            sum += p.confidence[c];
        }
        // normalized for the predictions format; argmax is unchanged
        if (sum > 0.0)
            for (double& v : p.confidence) v /= sum;
        else
            for (double& v : p.confidence) v = 1.0 / kNumSubtypes;
        p.predicted = ordinal(fuse(confidences[i], grid.weights));
        preds.push_back(std::move(p));
    }
    write_predictions(preds, truths, paths.fused_predictions());
    manifest.record("fuse", paths.fused_predictions());
    std::cout << "[fuse] weights " << format_double(grid.weights.w[0]) << ","
              << format_double(grid.weights.w[1]) << "," << format_double(grid.weights.w[2])
              << "," << format_double(grid.weights.w[3]) << " val score "
              << format_double(grid.best_score) << "\n";
}

// Upsert one stage row in metrics.csv so re-running is idempotent.
inline MetricsReport eval_predictions(const fs::path& pred_path, const std::string& stage,
                                      const ArtifactPaths& paths) {
    require_artifact(pred_path, "finetune");
    const auto rows = read_predictions(pred_path);
    if (rows.empty()) throw DataError("no prediction rows in " + pred_path.string());
    std::vector<std::size_t> preds, truths;
    for (const auto& r : rows) {
        preds.push_back(r.predicted);
        truths.push_back(r.truth);
    }
    MetricsReport report = compute_metrics(preds, truths, kNumSubtypes, stage);

    std::vector<MetricsReport> reports;
    if (fs::exists(paths.metrics())) reports = read_report(paths.metrics());
    bool replaced = false;
    for (auto& r : reports)
        if (r.stage == stage) {
            r = report;
            replaced = true;
        }
    if (!replaced) reports.push_back(report);
    write_report(reports, paths.metrics());
    Manifest(paths.out).record("eval", paths.metrics());
    std::cout << "[eval] " << stage << ": accuracy " << format_double(report.accuracy)
              << ", macro F1 " << format_double(report.macro_f1) << "\n";
    return report;
}

inline void stage_eval(const RunConfig& cfg, const ArtifactPaths& paths) {
    bool any = false;
    if (fs::exists(paths.predictions()) || cfg.stages.at("finetune")) {
        eval_predictions(paths.predictions(), "finetune", paths);
        any = true;
    }
    if (fs::exists(paths.fused_predictions()) || cfg.stages.at("fuse")) {
        eval_predictions(paths.fused_predictions(), "fusion", paths);
        any = true;
    }
    if (!any) throw DataError("eval: no prediction files in " + paths.out.string());
}

inline void run_pipeline(const RunConfig& cfg, const ArtifactPaths& paths) {
    if (cfg.stages.at("gen")) stage_gen(cfg, paths);
    if (cfg.stages.at("split")) stage_split(cfg, paths);
    if (cfg.stages.at("coteach")) stage_coteach(cfg, paths);
    if (cfg.stages.at("denoise")) stage_denoise(cfg, paths);
    if (cfg.stages.at("finetune")) stage_finetune(cfg, paths);
    if (cfg.stages.at("fuse")) stage_fuse(cfg, paths);
    if (cfg.stages.at("eval")) stage_eval(cfg, paths);
}

namespace detail {

inline MetricsReport slide_report(const MlpModel& model, const Dataset& val,
                                  const std::string& stage) {
    std::vector<std::size_t> preds, truths;
    for (const auto& bag : val) {
        preds.push_back(predict_slide(model, bag).predicted);
        truths.push_back(ordinal(bag.label));
    }
    return compute_metrics(preds, truths, kNumSubtypes, stage);
}

} // namespace detail

// The paper's comparisons on one dataset: resampling on/off, co-teaching vs
// plain, LOF on/off, the alpha sweep, and direct four-class vs weighted
// fusion. One metrics row per arm.
inline std::vector<MetricsReport> run_ablation(const RunConfig& cfg, const ArtifactPaths& paths) {
    if (!fs::exists(paths.dataset())) stage_gen(cfg, paths);
    if (!fs::exists(paths.train()) || !fs::exists(paths.val())) stage_split(cfg, paths);
    const Dataset train = read_dataset(paths.train());
    const Dataset val = read_dataset(paths.val());
    const BagView tviews = as_views(train);
    const BagView vviews = as_views(val);

    std::vector<MetricsReport> rows;

    // resampling ablation on the plain classifier
    {
        CoteachConfig cc = cfg.coteach_config(derive_seed(cfg.seed, "ablate/baseline"));
        const std::uint64_t init = derive_seed(cfg.seed, "ablate/baseline-init");
        cc.use_resample = false;
        rows.push_back(detail::slide_report(train_plain(tviews, cc, init), val, "baseline-noresample"));
        cc.use_resample = true;
        rows.push_back(detail::slide_report(train_plain(tviews, cc, init), val, "baseline-resample"));
        std::cout << "[ablate] baseline resample off/on F1 " << format_double(rows[0].macro_f1)
                  << " / " << format_double(rows[1].macro_f1) << "\n";
    }

    // co-teaching vs plain, then LOF off/on and the alpha sweep downstream
    const CoteachConfig cc = cfg.coteach_config(derive_seed(cfg.seed, "ablate/coteach"));
    const CoteachResult ct = train_coteach(tviews, vviews, cc);
    rows.push_back(detail::slide_report(ct.chosen_model(), val, "coteach"));

    LofParams lof = cfg.lof;
    lof.seed = derive_seed(cfg.seed, "ablate/lof");
    auto [kept, denoise_report] = filter_all_classes(ct.candidates, lof);
    auto [bags_nolof, skipped_nolof] = build_mil_bags(tviews, ct.candidates);
    auto [bags_lof, skipped_lof] = build_mil_bags(tviews, kept);
    (void)skipped_nolof;
    (void)skipped_lof;

    const std::uint64_t mil_seed = derive_seed(cfg.seed, "ablate/mil");
    {
        const MilConfig mc = cfg.mil_config(mil_seed, cfg.mil_alpha);
        rows.push_back(detail::slide_report(
            finetune_two_stage(ct.chosen_model(), bags_nolof, vviews, mc).model, val,
            "finetune-nolof"));
        rows.push_back(detail::slide_report(
            finetune_two_stage(ct.chosen_model(), bags_lof, vviews, mc).model, val,
            "finetune-lof"));
    }
    MlpModel direct_model;
    for (const double alpha : {0.0, 0.5, 1.0, 2.0}) {
        const MilConfig mc = cfg.mil_config(mil_seed, alpha);
        MlpModel m = finetune_two_stage(ct.chosen_model(), bags_lof, vviews, mc).model;
        if (alpha == cfg.mil_alpha) direct_model = m;
        rows.push_back(detail::slide_report(m, val, "alpha-" + format_double(alpha)));
    }
    if (direct_model.layer_dims.empty()) {
        const MilConfig mc = cfg.mil_config(mil_seed, cfg.mil_alpha);
        direct_model = finetune_two_stage(ct.chosen_model(), bags_lof, vviews, mc).model;
    }
    rows.push_back(detail::slide_report(direct_model, val, "direct-4class"));

    // weighted one-vs-rest fusion
    std::array<BinaryTrainResult, kNumSubtypes> results;
    run_tasks(kNumSubtypes, resolve_threads(kNumSubtypes), [&](std::size_t c) {
        results[c] = train_binary(subtype_from_ordinal(c), train, val, cfg.binary_config(),
                                  derive_seed(cfg.seed, "ablate/fusion", c));
    });
    std::array<BinaryModel, kNumSubtypes> models;
    for (std::size_t c = 0; c < kNumSubtypes; ++c) models[c] = results[c].binary;
    std::vector<std::array<double, kNumSubtypes>> confidences;
    std::vector<std::size_t> truths;
    for (const auto& bag : val) {
        confidences.push_back(binary_slide_confidences(models, bag));
        truths.push_back(ordinal(bag.label));
    }
    const GridSearchResult grid =
        grid_search(confidences, truths, cfg.fusion_grid_step, cfg.fusion_objective);
    std::vector<std::size_t> fused_preds;
    for (const auto& conf : confidences) fused_preds.push_back(ordinal(fuse(conf, grid.weights)));
    rows.push_back(compute_metrics(fused_preds, truths, kNumSubtypes, "fusion-weighted"));

    write_report(rows, paths.ablation());
    Manifest(paths.out).record("ablate", paths.ablation());
    for (const auto& r : rows)
        std::cout << "[ablate] " << r.stage << ": accuracy " << format_double(r.accuracy)
                  << ", macro F1 " << format_double(r.macro_f1) << "\n";
    return rows;
}

} // namespace dpmil
