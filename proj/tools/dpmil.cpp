// dpmil: five-stage weakly-supervised bag classification pipeline on
// synthetic data. Subcommands mirror the stages; `pipeline` chains them and
// `pipeline --ablate` runs the comparison arms.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dpmil/dpmil.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    bool has_seed = false;
    std::uint64_t seed = 0;
};

dpmil::RunConfig make_config(const CliOptions& opts) {
    dpmil::RunConfig cfg;
    if (!opts.config_path.empty()) cfg = dpmil::load_config(opts.config_path);
    if (opts.has_seed) cfg.seed = opts.seed;
    if (!opts.out_dir.empty()) cfg.out = opts.out_dir;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"DPMIL pipeline: balanced resampling, co-teaching, LOF denoising, "
                 "two-stage MIL fine-tuning and one-vs-rest fusion"};
    app.require_subcommand(1);

    CliOptions opts;
    app.add_option("--config", opts.config_path, "config file (section.key = value lines)");
    app.add_option("--out", opts.out_dir, "output directory for artifacts");
    auto* seed_opt = app.add_option("--seed", opts.seed, "global seed overriding the config");

    auto* cmd_gen = app.add_subcommand("gen", "generate the synthetic bag dataset");
    auto* cmd_split = app.add_subcommand("split", "stratified train/val split");
    auto* cmd_coteach = app.add_subcommand("coteach", "train the co-teaching pair");
    auto* cmd_denoise = app.add_subcommand("denoise", "LOF-filter candidate patches");
    auto* cmd_finetune = app.add_subcommand("finetune", "two-stage MIL fine-tuning");
    auto* cmd_fuse = app.add_subcommand("fuse", "train binary models and fuse with grid search");
    auto* cmd_eval = app.add_subcommand("eval", "compute metrics from a predictions file");
    auto* cmd_pipeline = app.add_subcommand("pipeline", "run all enabled stages");

    std::string eval_pred;
    std::string eval_stage = "finetune";
    cmd_eval->add_option("--pred", eval_pred, "predictions CSV (defaults to the pipeline outputs)");
    cmd_eval->add_option("--stage", eval_stage, "stage tag for the metrics row");

    bool ablate = false;
    cmd_pipeline->add_flag("--ablate", ablate, "run the ablation comparison arms");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        opts.has_seed = seed_opt->count() > 0;
        const dpmil::RunConfig cfg = make_config(opts);
        const dpmil::ArtifactPaths paths{cfg.out};
        std::filesystem::create_directories(paths.out);

        if (cmd_gen->parsed()) {
            dpmil::stage_gen(cfg, paths);
        } else if (cmd_split->parsed()) {
            dpmil::stage_split(cfg, paths);
        } else if (cmd_coteach->parsed()) {
            dpmil::stage_coteach(cfg, paths);
        } else if (cmd_denoise->parsed()) {
            dpmil::stage_denoise(cfg, paths);
        } else if (cmd_finetune->parsed()) {
            dpmil::stage_finetune(cfg, paths);
        } else if (cmd_fuse->parsed()) {
            dpmil::stage_fuse(cfg, paths);
        } else if (cmd_eval->parsed()) {
            if (eval_pred.empty()) {
                dpmil::stage_eval(cfg, paths);
            } else {
                dpmil::eval_predictions(eval_pred, eval_stage, paths);
            }
        } else if (cmd_pipeline->parsed()) {
            if (ablate) {
                dpmil::run_ablation(cfg, paths);
            } else {
                dpmil::run_pipeline(cfg, paths);
            }
        }
        return 0;
    } catch (const dpmil::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
