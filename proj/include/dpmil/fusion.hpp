#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dpmil/coteach.hpp"
#include "dpmil/errors.hpp"
#include "dpmil/lof.hpp"
#include "dpmil/metrics.hpp"
#include "dpmil/miltrain.hpp"
#include "dpmil/synthdata.hpp"

namespace dpmil {

struct FusionWeights {
    std::array<double, kNumSubtypes> w{1.0, 1.0, 1.0, 1.0};
};

// Binary ordinal convention: 1 = target subtype, 0 = pooled rest.
inline constexpr std::size_t kBinaryTarget = 1;

struct BinaryModel {
    Subtype target = Subtype::LuminalA;
    MlpModel model;
};

struct BinaryPipelineConfig {
    CoteachConfig coteach;
    LofParams lof;
    MilConfig mil;

    BinaryPipelineConfig() { mil.alpha = 0.5; }
};

struct BinaryTrainResult {
    BinaryModel binary;
    DenoiseReport denoise;
    std::size_t bags_skipped = 0;
    double val_f1 = 0.0; // binary slide-level macro F1 of the fine-tuned model
};

// One-vs-rest pipeline: relabel, co-teach with resampling, LOF-filter the
// target and pooled-rest candidate clouds, then two-stage MIL fine-tuning.
inline BinaryTrainResult train_binary(Subtype target, const Dataset& train, const Dataset& val,
                                      BinaryPipelineConfig cfg, std::uint64_t seed) {
    std::size_t positives = 0, negatives = 0;
    for (const auto& bag : train) (bag.label == target ? positives : negatives) += 1;
    if (positives == 0)
        throw ConfigError("train_binary: no positive bags for " +
                          std::string(subtype_name(target)));
    if (negatives == 0)
        throw ConfigError("train_binary: no negative bags for " +
                          std::string(subtype_name(target)));

    const BagView tviews = binary_views(train, target);
    const BagView vviews = binary_views(val, target);

    cfg.coteach.num_classes = 2;
    cfg.coteach.seed = derive_seed(seed, "binary/coteach");
    cfg.lof.seed = derive_seed(seed, "binary/lof");
    cfg.mil.seed = derive_seed(seed, "binary/mil");

    const CoteachResult ct = train_coteach(tviews, vviews, cfg.coteach);
    auto [kept, denoise] = filter_all_classes(ct.candidates, cfg.lof);
    auto [mil_bags, skipped] = build_mil_bags(tviews, kept);
    const FinetuneResult ft = finetune_two_stage(ct.chosen_model(), mil_bags, vviews, cfg.mil);

    BinaryTrainResult out;
    out.binary = BinaryModel{target, ft.model};
    out.denoise = std::move(denoise);
    out.bags_skipped = skipped;
    out.val_f1 = vviews.empty() ? 0.0 : slide_macro_f1(ft.model, vviews, 2);
    return out;
}

// Slide-level target confidence from each of the four binary models.
inline std::array<double, kNumSubtypes> binary_slide_confidences(
    const std::array<BinaryModel, kNumSubtypes>& models, const Bag& bag) {
    std::array<double, kNumSubtypes> conf{};
    for (std::size_t c = 0; c < kNumSubtypes; ++c)
        conf[c] = predict_slide(models[c].model, bag).confidence[kBinaryTarget];
    return conf;
}

// score_c = w_c * conf_c; argmax with lowest-ordinal tie-break.
inline Subtype fuse(const std::array<double, kNumSubtypes>& confidences,
                    const FusionWeights& weights) {
    std::size_t best = 0;
    double best_score = weights.w[0] * confidences[0];
    for (std::size_t c = 1; c < kNumSubtypes; ++c) {
        const double score = weights.w[c] * confidences[c];
        if (score > best_score) {
            best = c;
            best_score = score;
        }
    }
    return subtype_from_ordinal(best);
}

enum class FusionObjective { MacroF1, Accuracy };

struct GridSearchResult {
    FusionWeights weights;
    double best_score = 0.0;
    std::size_t tuples_evaluated = 0;
};

// Exhaustive search over weight 4-tuples from {step, 2*step, ..., 1.0},
// maximizing the validation objective; ties keep the lexicographically first
// tuple.
inline GridSearchResult grid_search(const std::vector<std::array<double, kNumSubtypes>>& confidences,
                                    const std::vector<std::size_t>& truths,
                                    double grid_step = 0.1,
                                    FusionObjective objective = FusionObjective::MacroF1) {
    if (confidences.empty()) throw DataError("grid_search: empty validation set");
    if (confidences.size() != truths.size())
        throw ArgumentError("grid_search: confidences/truths length mismatch");
    const auto levels = static_cast<std::size_t>(std::floor(1.0 / grid_step + 1e-9));
    if (grid_step <= 0.0 || levels < 2)
        throw ArgumentError("grid_search: grid_step must cut (0, 1] into at least 2 points");

    std::vector<std::size_t> preds(truths.size());
    GridSearchResult result;
    double best = -1.0;
    for (std::size_t i0 = 1; i0 <= levels; ++i0)
        for (std::size_t i1 = 1; i1 <= levels; ++i1)
            for (std::size_t i2 = 1; i2 <= levels; ++i2)
                for (std::size_t i3 = 1; i3 <= levels; ++i3) {
                    const FusionWeights w{{static_cast<double>(i0) * grid_step,
                                           static_cast<double>(i1) * grid_step,
                                           static_cast<double>(i2) * grid_step,
                                           static_cast<double>(i3) * grid_step}};
                    for (std::size_t s = 0; s < confidences.size(); ++s)
                        preds[s] = ordinal(fuse(confidences[s], w));
                    const MetricsReport m = compute_metrics(preds, truths, kNumSubtypes);
                    const double score =
                        objective == FusionObjective::MacroF1 ? m.macro_f1 : m.accuracy;
                    ++result.tuples_evaluated;
                    if (score > best) {
                        best = score;
                        result.weights = w;
                    }
                }
    result.best_score = best;
    return result;
}

// "fusion v1": one "class_ordinal weight" line per subtype.
inline void write_fusion_weights(const FusionWeights& weights,
                                 const std::filesystem::path& path) {
    std::string out = "fusion v1\n";
    for (std::size_t c = 0; c < kNumSubtypes; ++c)
        out += std::to_string(c) + ' ' + format_double(weights.w[c]) + '\n';
    write_file(path, out);
}

inline FusionWeights read_fusion_weights(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    const std::string name = path.string();
    if (lines.empty() || lines[0] != "fusion v1")
        throw ParseError(name, 1, "expected 'fusion v1' header");
    FusionWeights weights;
    std::size_t seen = 0;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto toks = split(lines[ln], ' ');
        if (toks.size() != 2) throw ParseError(name, ln + 1, "expected 'class_ordinal weight'");
        const std::string ctx = name + ":" + std::to_string(ln + 1);
        const auto c = static_cast<std::size_t>(parse_u64(toks[0], ctx));
        if (c >= kNumSubtypes) throw ParseError(name, ln + 1, "class ordinal out of range");
        weights.w[c] = parse_double(toks[1], ctx);
        if (weights.w[c] <= 0.0) throw ParseError(name, ln + 1, "weights must be positive");
        ++seen;
    }
    if (seen != kNumSubtypes) throw ParseError(name, lines.size(), "expected 4 weight lines");
    return weights;
}

} // namespace dpmil
