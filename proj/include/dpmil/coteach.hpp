#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpmil/bagview.hpp"
#include "dpmil/errors.hpp"
#include "dpmil/miltrain.hpp"
#include "dpmil/mlp.hpp"
#include "dpmil/resample.hpp"
#include "dpmil/rng.hpp"

namespace dpmil {

struct CoteachConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double lr0 = 0.01;
    double lr_power = 0.9;
    double tau = 0.4; // forget rate; the synthetic harness sets it to the generator noise fraction
    std::size_t ramp_epochs = 10; // Tk
    double conf_threshold = 0.5;
    std::size_t num_classes = kNumSubtypes;
    std::vector<std::size_t> hidden_dims{32, 16};
    bool use_resample = true;
    ResampleConfig resample;
    std::uint64_t seed = 0;
    // default: derived from seed; overridable to exercise exchange symmetry
    std::optional<std::uint64_t> init_seed_a;
    std::optional<std::uint64_t> init_seed_b;

    void validate() const {
        if (tau < 0.0 || tau >= 1.0) throw ConfigError("coteach: tau must be in [0, 1)");
        if (ramp_epochs == 0) throw ConfigError("coteach: ramp_epochs must be >= 1");
        if (batch_size == 0) throw ConfigError("coteach: batch_size must be >= 1");
        if (conf_threshold <= 0.0 || conf_threshold > 1.0)
            throw ConfigError("coteach: conf_threshold must be in (0, 1]");
        if (num_classes < 2) throw ConfigError("coteach: need >= 2 classes");
    }
};

// R(T) = 1 - tau * min(T/Tk, 1)
inline double keep_rate(std::size_t epoch, double tau, std::size_t ramp_epochs) {
    const double ramp =
        std::min(static_cast<double>(epoch) / static_cast<double>(ramp_epochs), 1.0);
    return 1.0 - tau * ramp;
}

// Indices of the keep_count smallest losses, ties broken by lower index,
// returned in ascending index order.
inline std::vector<std::size_t> select_small_loss(std::span<const double> losses,
                                                  std::size_t keep_count) {
    if (keep_count == 0 || keep_count > losses.size())
        throw ArgumentError("select_small_loss: keep_count " + std::to_string(keep_count) +
                            " out of range for " + std::to_string(losses.size()) + " losses");
    std::vector<std::size_t> idx(losses.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
    idx.resize(keep_count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// An instance that passed the confidence rule, with its penultimate-layer
// feature for LOF filtering.
struct Candidate {
    std::string bag_id;
    std::size_t instance_index = 0;
    std::size_t label = 0;
    double confidence = 0.0;
    std::vector<double> feature;
    const Instance* src = nullptr;
};

// Keeps an instance iff the model's argmax agrees with the bag label and the
// confidence clears the threshold; grouped by bag label.
inline std::vector<std::vector<Candidate>> extract_candidates(const MlpModel& model,
                                                              const BagView& bags,
                                                              double conf_threshold) {
    if (conf_threshold <= 0.0 || conf_threshold > 1.0)
        throw ArgumentError("extract_candidates: threshold must be in (0, 1]");
    std::vector<std::vector<Candidate>> out(model.num_classes());
    for (const auto& lb : bags) {
        if (lb.label >= model.num_classes())
            throw ArgumentError("extract_candidates: bag label out of range");
        const ForwardResult fwd = forward(model, bag_features(*lb.bag));
        for (std::size_t i = 0; i < fwd.probs.rows; ++i) {
            auto row = fwd.probs.row(i);
            const std::size_t am = argmax_lowest_tie(row);
            if (am != lb.label || row[am] < conf_threshold) continue;
            Candidate c;
            c.bag_id = lb.bag->bag_id;
            c.instance_index = lb.bag->instances[i].index;
            c.label = lb.label;
            c.confidence = row[am];
            auto feat = fwd.penultimate.row(i);
            c.feature.assign(feat.begin(), feat.end());
            c.src = &lb.bag->instances[i];
            out[lb.label].push_back(std::move(c));
        }
    }
    return out;
}

struct CoteachResult {
    MlpModel model_a;
    MlpModel model_b;
    int chosen = 0; // 0 = a, 1 = b
    double f1_a = 0.0;
    double f1_b = 0.0;
    std::vector<double> f1_history_a;
    std::vector<double> f1_history_b;
    std::vector<std::vector<Candidate>> candidates;
    // final-epoch small-loss selections, for noise-rejection accounting
    std::vector<const Instance*> final_selected_a;
    std::vector<const Instance*> final_selected_b;

    const MlpModel& chosen_model() const { return chosen == 0 ? model_a : model_b; }
};

namespace detail {

struct EpochPlan {
    std::vector<TrainItem> pool;
    std::size_t epoch_size = 0;
    std::size_t batches_per_epoch = 0;
};

inline EpochPlan make_epoch_plan(const BagView& train, const CoteachConfig& cfg) {
    EpochPlan plan;
    plan.pool = instance_pool(train);
    if (plan.pool.empty()) throw ConfigError("coteach: empty training set");
    plan.epoch_size = cfg.use_resample
                          ? cfg.num_classes * resolve_target(plan.pool, cfg.num_classes, cfg.resample)
                          : plan.pool.size();
    plan.batches_per_epoch = (plan.epoch_size + cfg.batch_size - 1) / cfg.batch_size;
    return plan;
}

inline std::vector<TrainItem> epoch_items(const EpochPlan& plan, const CoteachConfig& cfg,
                                          std::size_t epoch) {
    std::vector<TrainItem> items;
    if (cfg.use_resample) {
        ResampleConfig rc = cfg.resample;
        rc.seed = derive_seed(cfg.seed, "coteach/resample", epoch);
        items = balance(plan.pool, cfg.num_classes, rc);
    } else {
        items = plan.pool;
    }
    Rng rng(derive_seed(cfg.seed, "coteach/shuffle", epoch));
    rng.shuffle(items);
    return items;
}

inline DenseMatrix gather_batch(const std::vector<TrainItem>& items, std::size_t b0,
                                std::size_t len, std::vector<std::size_t>& labels) {
    const std::size_t dim = items[b0].features.size();
    DenseMatrix x(len, dim);
    labels.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
        const auto& f = items[b0 + i].features;
        std::copy(f.begin(), f.end(), x.row(i).begin());
        labels[i] = items[b0 + i].label;
    }
    return x;
}

inline DenseMatrix gather_selection(const DenseMatrix& batch,
                                    std::span<const std::size_t> labels,
                                    std::span<const std::size_t> sel,
                                    std::vector<std::size_t>& sel_labels) {
    DenseMatrix x(sel.size(), batch.cols);
    sel_labels.resize(sel.size());
    for (std::size_t i = 0; i < sel.size(); ++i) {
        auto src = batch.row(sel[i]);
        std::copy(src.begin(), src.end(), x.row(i).begin());
        sel_labels[i] = labels[sel[i]];
    }
    return x;
}

inline std::vector<double> batch_losses(const MlpModel& model, const DenseMatrix& batch,
                                        std::span<const std::size_t> labels) {
    const ForwardResult fwd = forward(model, batch);
    std::vector<double> losses(batch.rows);
    for (std::size_t i = 0; i < batch.rows; ++i)
        losses[i] = cross_entropy(fwd.probs.row(i), labels[i]);
    return losses;
}

} // namespace detail

// Two peer models exchange small-loss selections every minibatch: both
// selections are computed on pre-update losses, then each model updates on
// the other's selection.
inline CoteachResult train_coteach(const BagView& train, const BagView& val,
                                   const CoteachConfig& cfg) {
    cfg.validate();
    detail::EpochPlan plan = detail::make_epoch_plan(train, cfg);
    const std::size_t dim = plan.pool.front().features.size();

    std::vector<std::size_t> dims{dim};
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(cfg.num_classes);

    CoteachResult result;
    result.model_a =
        MlpModel::init(dims, cfg.init_seed_a.value_or(derive_seed(cfg.seed, "coteach/model-a")));
    result.model_b =
        MlpModel::init(dims, cfg.init_seed_b.value_or(derive_seed(cfg.seed, "coteach/model-b")));

    const std::size_t total_steps = std::max<std::size_t>(1, cfg.epochs * plan.batches_per_epoch);
    OptimizerState opt_a{cfg.lr0, cfg.lr_power, 0, total_steps, cfg.batch_size};
    OptimizerState opt_b{cfg.lr0, cfg.lr_power, 0, total_steps, cfg.batch_size};

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<TrainItem> items = detail::epoch_items(plan, cfg, epoch);
        const double rate = keep_rate(epoch, cfg.tau, cfg.ramp_epochs);
        const bool final_epoch = epoch + 1 == cfg.epochs;
        for (std::size_t b0 = 0; b0 < items.size(); b0 += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, items.size() - b0);
            std::vector<std::size_t> labels;
            const DenseMatrix batch = detail::gather_batch(items, b0, len, labels);

            const std::vector<double> losses_a = detail::batch_losses(result.model_a, batch, labels);
            const std::vector<double> losses_b = detail::batch_losses(result.model_b, batch, labels);
            const std::size_t keep = std::clamp<std::size_t>(
                static_cast<std::size_t>(std::ceil(rate * static_cast<double>(len))), 1, len);
            const std::vector<std::size_t> sel_a = select_small_loss(losses_a, keep);
            const std::vector<std::size_t> sel_b = select_small_loss(losses_b, keep);

            if (final_epoch) {
                for (std::size_t i : sel_a) result.final_selected_a.push_back(items[b0 + i].src);
                for (std::size_t i : sel_b) result.final_selected_b.push_back(items[b0 + i].src);
            }

            // A's selection teaches B, then B's pre-update selection teaches A
            std::vector<std::size_t> sub_labels;
            DenseMatrix sub = detail::gather_selection(batch, labels, sel_a, sub_labels);
            sgd_step(result.model_b, sub, sub_labels, opt_b);
            sub = detail::gather_selection(batch, labels, sel_b, sub_labels);
            sgd_step(result.model_a, sub, sub_labels, opt_a);
        }
        if (!val.empty()) {
            result.f1_history_a.push_back(slide_macro_f1(result.model_a, val, cfg.num_classes));
            result.f1_history_b.push_back(slide_macro_f1(result.model_b, val, cfg.num_classes));
        }
    }

    if (!val.empty()) {
        result.f1_a = result.f1_history_a.empty() ? slide_macro_f1(result.model_a, val, cfg.num_classes)
                                                  : result.f1_history_a.back();
        result.f1_b = result.f1_history_b.empty() ? slide_macro_f1(result.model_b, val, cfg.num_classes)
                                                  : result.f1_history_b.back();
    }
    result.chosen = result.f1_b > result.f1_a ? 1 : 0;
    result.candidates = extract_candidates(result.chosen_model(), train, cfg.conf_threshold);
    return result;
}

// The no-co-teaching baseline: one model, full-batch updates, identical data
// order and schedule streams. train_coteach with tau = 0 matches this exactly.
inline MlpModel train_plain(const BagView& train, const CoteachConfig& cfg,
                            std::uint64_t init_seed) {
    cfg.validate();
    detail::EpochPlan plan = detail::make_epoch_plan(train, cfg);
    const std::size_t dim = plan.pool.front().features.size();

    std::vector<std::size_t> dims{dim};
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(cfg.num_classes);
    MlpModel model = MlpModel::init(dims, init_seed);

    const std::size_t total_steps = std::max<std::size_t>(1, cfg.epochs * plan.batches_per_epoch);
    OptimizerState opt{cfg.lr0, cfg.lr_power, 0, total_steps, cfg.batch_size};
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<TrainItem> items = detail::epoch_items(plan, cfg, epoch);
        for (std::size_t b0 = 0; b0 < items.size(); b0 += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, items.size() - b0);
            std::vector<std::size_t> labels;
            const DenseMatrix batch = detail::gather_batch(items, b0, len, labels);
            sgd_step(model, batch, labels, opt);
        }
    }
    return model;
}

// Join kept candidates back to their bags' raw features for fine-tuning.
// Bags left with zero surviving patches are dropped and counted.
inline std::pair<std::vector<MilBag>, std::size_t> build_mil_bags(
    const BagView& bags, const std::vector<std::vector<Candidate>>& kept) {
    std::map<std::string, std::set<std::size_t>> keep_set;
    for (const auto& cls : kept)
        for (const auto& c : cls) keep_set[c.bag_id].insert(c.instance_index);

    std::vector<MilBag> out;
    std::size_t skipped = 0;
    for (const auto& lb : bags) {
        auto it = keep_set.find(lb.bag->bag_id);
        std::vector<const Instance*> rows;
        if (it != keep_set.end())
            for (const auto& inst : lb.bag->instances)
                if (it->second.count(inst.index)) rows.push_back(&inst);
        if (rows.empty()) {
            ++skipped;
            continue;
        }
        MilBag mb;
        mb.bag_id = lb.bag->bag_id;
        mb.label = lb.label;
        mb.patches = DenseMatrix(rows.size(), rows.front()->features.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            std::copy(rows[i]->features.begin(), rows[i]->features.end(),
                      mb.patches.row(i).begin());
        out.push_back(std::move(mb));
    }
    return {std::move(out), skipped};
}

// "candidates v1" text format
inline void write_candidates(const std::vector<std::vector<Candidate>>& per_class,
                             const std::filesystem::path& path) {
    std::size_t dim = 0;
    for (const auto& cls : per_class)
        if (!cls.empty()) {
            dim = cls.front().feature.size();
            break;
        }
    std::string out = "candidates v1 dim=" + std::to_string(dim) + "\n";
    for (const auto& cls : per_class) {
        for (const auto& c : cls) {
            out += c.bag_id + ',' + std::to_string(c.instance_index) + ',' +
                   std::to_string(c.label) + ',' + format_double(c.confidence);
            for (double f : c.feature) out += ',' + format_double(f);
            out += '\n';
        }
    }
    write_file(path, out);
}

inline std::vector<std::vector<Candidate>> read_candidates(const std::filesystem::path& path,
                                                           std::size_t num_classes) {
    const auto lines = read_lines(path);
    const std::string name = path.string();
    if (lines.empty() || lines[0].rfind("candidates v1 dim=", 0) != 0)
        throw ParseError(name, 1, "expected 'candidates v1 dim=<d>' header");
    const std::size_t dim = static_cast<std::size_t>(parse_u64(lines[0].substr(18), name + ":1"));
    std::vector<std::vector<Candidate>> out(num_classes);
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto toks = split(lines[ln], ',');
        if (toks.size() != 4 + dim) throw ParseError(name, ln + 1, "bad candidate row arity");
        const std::string ctx = name + ":" + std::to_string(ln + 1);
        Candidate c;
        c.bag_id = toks[0];
        c.instance_index = static_cast<std::size_t>(parse_u64(toks[1], ctx));
        c.label = static_cast<std::size_t>(parse_u64(toks[2], ctx));
        if (c.label >= num_classes) throw ParseError(name, ln + 1, "class ordinal out of range");
        c.confidence = parse_double(toks[3], ctx);
        c.feature.resize(dim);
        for (std::size_t j = 0; j < dim; ++j) c.feature[j] = parse_double(toks[4 + j], ctx);
        out[c.label].push_back(std::move(c));
    }
    return out;
}

} // namespace dpmil
