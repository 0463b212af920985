#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dpmil/bagview.hpp"
#include "dpmil/errors.hpp"
#include "dpmil/metrics.hpp"
#include "dpmil/mlp.hpp"
#include "dpmil/rng.hpp"

namespace dpmil {

struct MilConfig {
    double alpha = 1.0;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double lr0 = 0.01;
    double lr_power = 0.9;
    std::uint64_t seed = 0;
};

// Slide confidence P_c: mean of the patch probability rows.
inline std::vector<double> aggregate_slide(const DenseMatrix& patch_probs) {
    if (patch_probs.rows == 0) throw DataError("aggregate_slide: empty bag");
    std::vector<double> p(patch_probs.cols, 0.0);
    for (std::size_t i = 0; i < patch_probs.rows; ++i) {
        auto r = patch_probs.row(i);
        for (std::size_t c = 0; c < patch_probs.cols; ++c) p[c] += r[c];
    }
    for (double& v : p) v /= static_cast<double>(patch_probs.rows);
    return p;
}

// One slide's contribution to the batch slide loss:
// alpha * (-log P_label) / n_slides.
inline double slide_loss(std::span<const double> slide_confidence, std::size_t label,
                         double alpha, std::size_t n_slides) {
    if (label >= slide_confidence.size())
        throw ArgumentError("slide_loss: label " + std::to_string(label) + " out of range");
    if (n_slides == 0) throw ArgumentError("slide_loss: n_slides must be >= 1");
    return alpha * -std::log(std::max(slide_confidence[label], kLogClamp)) /
           static_cast<double>(n_slides);
}

inline std::size_t argmax_lowest_tie(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

struct SlidePrediction {
    std::string bag_id;
    std::vector<double> confidence;
    std::size_t predicted = 0;
};

inline DenseMatrix bag_features(const Bag& bag) {
    if (bag.instances.empty()) throw DataError("bag '" + bag.bag_id + "' has no instances");
    DenseMatrix x(bag.instances.size(), bag.instances.front().features.size());
    for (std::size_t i = 0; i < bag.instances.size(); ++i) {
        const auto& f = bag.instances[i].features;
        std::copy(f.begin(), f.end(), x.row(i).begin());
    }
    return x;
}

// Inference aggregates over every patch of the bag.
inline SlidePrediction predict_slide(const MlpModel& model, const Bag& bag) {
    const ForwardResult fwd = forward(model, bag_features(bag));
    SlidePrediction pred;
    pred.bag_id = bag.bag_id;
    pred.confidence = aggregate_slide(fwd.probs);
    pred.predicted = argmax_lowest_tie(pred.confidence);
    return pred;
}

inline double slide_macro_f1(const MlpModel& model, const BagView& bags,
                             std::size_t num_classes) {
    std::vector<std::size_t> preds, truths;
    preds.reserve(bags.size());
    truths.reserve(bags.size());
    for (const auto& lb : bags) {
        preds.push_back(predict_slide(model, *lb.bag).predicted);
        truths.push_back(lb.label);
    }
    return macro_f1(preds, truths, num_classes);
}

// A bag reduced to its surviving discriminative patches (raw features).
struct MilBag {
    std::string bag_id;
    std::size_t label = 0;
    DenseMatrix patches;
};

struct FinetuneResult {
    MlpModel model;
    std::vector<double> val_f1_history;
};

// Two-stage fine-tuning. Each epoch runs patch-level cross-entropy SGD over
// all discriminative patches, then one slide-level pass: per bag, the
// alpha-weighted gradient of -log P_label distributes as
// -alpha / (P_label * N_p) onto each patch's probability row.
// Stages keep separate poly-decay schedules, so alpha = 0 reproduces
// stage-1-only training exactly.
inline FinetuneResult finetune_two_stage(const MlpModel& init, const std::vector<MilBag>& bags,
                                         const BagView& val, const MilConfig& cfg) {
    if (cfg.alpha < 0.0) throw ConfigError("finetune: alpha must be >= 0");
    if (cfg.batch_size == 0) throw ConfigError("finetune: batch_size must be >= 1");
    if (bags.empty()) throw DataError("finetune: no bags with discriminative patches");
    for (const auto& b : bags)
        if (b.patches.rows == 0)
            throw DataError("finetune: bag '" + b.bag_id + "' has no patches");
    if (bags.front().patches.cols != init.input_dim())
        throw ShapeError("finetune: patch dim does not match model input dim");

    FinetuneResult out{init, {}};
    MlpModel& model = out.model;
    const std::size_t num_classes = model.num_classes();

    // stage-1 items: (bag index, row within bag)
    std::vector<std::pair<std::size_t, std::size_t>> items;
    for (std::size_t b = 0; b < bags.size(); ++b)
        for (std::size_t i = 0; i < bags[b].patches.rows; ++i) items.emplace_back(b, i);

    const std::size_t batches_per_epoch = (items.size() + cfg.batch_size - 1) / cfg.batch_size;
    OptimizerState opt1{cfg.lr0, cfg.lr_power, 0, std::max<std::size_t>(1, cfg.epochs * batches_per_epoch),
                        cfg.batch_size};
    OptimizerState opt2{cfg.lr0, cfg.lr_power, 0, std::max<std::size_t>(1, cfg.epochs * bags.size()),
                        cfg.batch_size};
    const std::size_t dim = model.input_dim();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // stage 1: patch-level cross-entropy
        std::vector<std::size_t> order(items.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng1(derive_seed(cfg.seed, "mil/stage1", epoch));
        rng1.shuffle(order);
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - b0);
            DenseMatrix x(len, dim);
            std::vector<std::size_t> labels(len);
            for (std::size_t i = 0; i < len; ++i) {
                const auto [bi, ri] = items[order[b0 + i]];
                auto src = bags[bi].patches.row(ri);
                std::copy(src.begin(), src.end(), x.row(i).begin());
                labels[i] = bags[bi].label;
            }
            sgd_step(model, x, labels, opt1);
        }

        // stage 2: slide-level loss, one bag per update
        std::vector<std::size_t> bag_order(bags.size());
        std::iota(bag_order.begin(), bag_order.end(), 0);
        Rng rng2(derive_seed(cfg.seed, "mil/stage2", epoch));
        rng2.shuffle(bag_order);
        for (std::size_t bi : bag_order) {
            const MilBag& bag = bags[bi];
            if (bag.label >= num_classes)
                throw ArgumentError("finetune: bag label out of range");
            ForwardCache cache = forward_cache(model, bag.patches);
            const std::vector<double> p = aggregate_slide(cache.probs());
            const double denom = std::max(p[bag.label], kLogClamp);
            DenseMatrix dprobs(bag.patches.rows, num_classes);
            const double g = -cfg.alpha / (denom * static_cast<double>(bag.patches.rows));
            for (std::size_t i = 0; i < bag.patches.rows; ++i) dprobs.at(i, bag.label) = g;
            Gradients grads = backward_from_prob_grad(model, cache, dprobs);
            apply_gradients(model, grads, poly_lr(opt2));
            ++opt2.step;
        }

        if (!val.empty()) out.val_f1_history.push_back(slide_macro_f1(model, val, num_classes));
    }
    return out;
}

// "predictions v1" CSV
inline void write_predictions(const std::vector<SlidePrediction>& predictions,
                              std::span<const std::size_t> truths,
                              const std::filesystem::path& path) {
    if (predictions.size() != truths.size())
        throw ArgumentError("write_predictions: predictions/truths length mismatch");
    std::string out = "predictions v1\n";
    const std::size_t m = predictions.empty() ? kNumSubtypes : predictions[0].confidence.size();
    out += "bag_id,true_class,predicted_class";
    for (std::size_t c = 0; c < m; ++c) out += ",P_" + std::to_string(c);
    out += '\n';
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& p = predictions[i];
        out += p.bag_id + ',' + std::to_string(truths[i]) + ',' + std::to_string(p.predicted);
        for (double v : p.confidence) out += ',' + format_double(v);
        out += '\n';
    }
    write_file(path, out);
}

struct PredictionRow {
    std::string bag_id;
    std::size_t truth = 0;
    std::size_t predicted = 0;
    std::vector<double> confidence;
};

inline std::vector<PredictionRow> read_predictions(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    const std::string name = path.string();
    if (lines.empty() || lines[0] != "predictions v1")
        throw ParseError(name, 1, "expected 'predictions v1' header");
    if (lines.size() < 2 || lines[1].rfind("bag_id,true_class,predicted_class", 0) != 0)
        throw ParseError(name, 2, "expected column header");
    const std::size_t m = split(lines[1], ',').size() - 3;
    std::vector<PredictionRow> rows;
    for (std::size_t ln = 2; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto toks = split(lines[ln], ',');
        if (toks.size() != 3 + m) throw ParseError(name, ln + 1, "bad prediction row arity");
        const std::string ctx = name + ":" + std::to_string(ln + 1);
        PredictionRow row;
        row.bag_id = toks[0];
        row.truth = static_cast<std::size_t>(parse_u64(toks[1], ctx));
        row.predicted = static_cast<std::size_t>(parse_u64(toks[2], ctx));
        row.confidence.resize(m);
        for (std::size_t c = 0; c < m; ++c) row.confidence[c] = parse_double(toks[3 + c], ctx);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace dpmil
