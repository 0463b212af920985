#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dpmil/coteach.hpp"
#include "dpmil/errors.hpp"
#include "dpmil/fusion.hpp"
#include "dpmil/lof.hpp"
#include "dpmil/miltrain.hpp"
#include "dpmil/resample.hpp"
#include "dpmil/synthdata.hpp"
#include "dpmil/text_io.hpp"

namespace dpmil {

// Flat "section.key = value" config. Unknown keys are rejected with the line
// number. tau and augment_sigma default to values derived from the generator
// section ("auto").
struct RunConfig {
    std::uint64_t seed = 42;
    std::string out = "run";

    GenConfig gen;
    double split_ratio = 0.8;

    bool resample_enabled = true;
    std::size_t resample_target = 0;    // 0 = median class size
    double resample_augment_sigma = -1; // <0 = 0.05 * gen.cluster_spread

    std::size_t coteach_epochs = 20;
    std::size_t coteach_batch_size = 32;
    double coteach_lr0 = 0.01;
    double coteach_tau = -1; // <0 = gen.noise_fraction
    std::size_t coteach_ramp_epochs = 10;
    double coteach_conf_threshold = 0.5;
    std::vector<std::size_t> hidden_dims{32, 16};

    LofParams lof;

    double mil_alpha = 0.5;
    std::size_t mil_epochs = 10;
    std::size_t mil_batch_size = 32;
    double mil_lr0 = 0.01;

    double fusion_grid_step = 0.1;
    double fusion_alpha = 0.5;
    FusionObjective fusion_objective = FusionObjective::MacroF1;

    std::map<std::string, bool> stages{{"gen", true},      {"split", true},
                                       {"coteach", true},  {"denoise", true},
                                       {"finetune", true}, {"fuse", true},
                                       {"eval", true}};

    double effective_tau() const { return coteach_tau < 0.0 ? gen.noise_fraction : coteach_tau; }
    double effective_augment_sigma() const {
        return resample_augment_sigma < 0.0 ? 0.05 * gen.cluster_spread : resample_augment_sigma;
    }

    ResampleConfig resample_config() const {
        ResampleConfig rc;
        rc.target_per_class = resample_target;
        rc.augment_sigma = effective_augment_sigma();
        return rc;
    }

    CoteachConfig coteach_config(std::uint64_t stage_seed) const {
        CoteachConfig cc;
        cc.epochs = coteach_epochs;
        cc.batch_size = coteach_batch_size;
        cc.lr0 = coteach_lr0;
        cc.tau = effective_tau();
        cc.ramp_epochs = coteach_ramp_epochs;
        cc.conf_threshold = coteach_conf_threshold;
        cc.hidden_dims = hidden_dims;
        cc.use_resample = resample_enabled;
        cc.resample = resample_config();
        cc.seed = stage_seed;
        return cc;
    }

    MilConfig mil_config(std::uint64_t stage_seed, double alpha) const {
        MilConfig mc;
        mc.alpha = alpha;
        mc.epochs = mil_epochs;
        mc.batch_size = mil_batch_size;
        mc.lr0 = mil_lr0;
        mc.seed = stage_seed;
        return mc;
    }

    BinaryPipelineConfig binary_config() const {
        BinaryPipelineConfig bc;
        bc.coteach = coteach_config(0); // seeds assigned inside train_binary
        bc.lof = lof;
        bc.mil = mil_config(0, fusion_alpha);
        return bc;
    }
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& ctx) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError(ctx + ": expected on/off, got '" + v + "'");
}

inline std::vector<std::size_t> parse_count_list(const std::string& v, const std::string& ctx) {
    std::vector<std::size_t> out;
    for (const auto& tok : split(v, ','))
        out.push_back(static_cast<std::size_t>(parse_u64(trim(tok), ctx)));
    return out;
}

} // namespace detail

inline void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value,
                              const std::string& ctx) {
    using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
    static const std::map<std::string, Setter> setters = {
        {"seed", [](RunConfig& c, const std::string& v, const std::string& x) { c.seed = parse_u64(v, x); }},
        {"out", [](RunConfig& c, const std::string& v, const std::string&) { c.out = v; }},
        {"gen.bags_per_class",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             const auto counts = detail::parse_count_list(v, x);
             if (counts.size() != kNumSubtypes)
                 throw ConfigError(x + ": expected 4 comma-separated counts");
             for (std::size_t i = 0; i < kNumSubtypes; ++i) c.gen.bags_per_class[i] = counts[i];
         }},
        {"gen.instances_min",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.gen.instances_min = parse_u64(v, x);
         }},
        {"gen.instances_max",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.gen.instances_max = parse_u64(v, x);
         }},
        {"gen.noise_fraction",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.gen.noise_fraction = parse_double(v, x);
         }},
        {"gen.separation",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.gen.class_center_separation = parse_double(v, x);
         }},
        {"gen.spread",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.gen.cluster_spread = parse_double(v, x);
         }},
        {"gen.feature_dim",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.gen.feature_dim = parse_u64(v, x);
         }},
        {"gen.resolution",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             if (!valid_resolution_tag(v)) throw ConfigError(x + ": bad resolution tag '" + v + "'");
             c.gen.resolution_tag = v;
         }},
        {"split.ratio",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.split_ratio = parse_double(v, x);
         }},
        {"resample.enabled",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.resample_enabled = detail::parse_bool(v, x);
         }},
        {"resample.target_per_class",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.resample_target = parse_u64(v, x);
         }},
        {"resample.augment_sigma",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.resample_augment_sigma = v == "auto" ? -1.0 : parse_double(v, x);
         }},
        {"coteach.epochs",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.coteach_epochs = parse_u64(v, x);
         }},
        {"coteach.batch_size",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.coteach_batch_size = parse_u64(v, x);
         }},
        {"coteach.lr0",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.coteach_lr0 = parse_double(v, x);
         }},
        {"coteach.tau",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.coteach_tau = v == "auto" ? -1.0 : parse_double(v, x);
         }},
        {"coteach.ramp_epochs",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.coteach_ramp_epochs = parse_u64(v, x);
         }},
        {"coteach.conf_threshold",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.coteach_conf_threshold = parse_double(v, x);
         }},
        {"coteach.hidden",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.hidden_dims = detail::parse_count_list(v, x);
         }},
        {"lof.k",
         [](RunConfig& c, const std::string& v, const std::string& x) { c.lof.k = parse_u64(v, x); }},
        {"lof.theta",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.lof.theta = parse_double(v, x);
         }},
        {"lof.cap_per_class",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.lof.cap_per_class = parse_u64(v, x);
         }},
        {"mil.alpha",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.mil_alpha = parse_double(v, x);
         }},
        {"mil.epochs",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.mil_epochs = parse_u64(v, x);
         }},
        {"mil.batch_size",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.mil_batch_size = parse_u64(v, x);
         }},
        {"mil.lr0",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.mil_lr0 = parse_double(v, x);
         }},
        {"fusion.grid_step",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.fusion_grid_step = parse_double(v, x);
         }},
        {"fusion.alpha",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             c.fusion_alpha = parse_double(v, x);
         }},
        {"fusion.objective",
         [](RunConfig& c, const std::string& v, const std::string& x) {
             if (v == "f1") c.fusion_objective = FusionObjective::MacroF1;
             else if (v == "accuracy") c.fusion_objective = FusionObjective::Accuracy;
             else throw ConfigError(x + ": fusion.objective must be f1 or accuracy");
         }},
    };

    if (key.rfind("stages.", 0) == 0) {
        const std::string stage = key.substr(7);
        auto it = cfg.stages.find(stage);
        if (it == cfg.stages.end()) throw ConfigError(ctx + ": unknown stage '" + stage + "'");
        it->second = detail::parse_bool(value, ctx);
        return;
    }
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(ctx + ": unknown key '" + key + "'");
    it->second(cfg, value, ctx);
}

inline RunConfig load_config(const std::filesystem::path& path) {
    RunConfig cfg;
    const auto lines = read_lines(path);
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::string line = trim(lines[ln]);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        const std::string ctx = path.string() + ":" + std::to_string(ln + 1);
        if (eq == std::string::npos) throw ConfigError(ctx + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(ctx + ": empty key");
        apply_config_line(cfg, key, value, ctx);
    }
    return cfg;
}

} // namespace dpmil
