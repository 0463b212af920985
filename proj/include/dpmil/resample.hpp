#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dpmil/bagview.hpp"
#include "dpmil/errors.hpp"
#include "dpmil/rng.hpp"

namespace dpmil {

struct ResampleConfig {
    // 0 means "use the median class size"
    std::size_t target_per_class = 0;
    double augment_sigma = 0.05;
    std::uint64_t seed = 0;
};

// Feature-space stand-in for image flips: independent Gaussian jitter per
// feature. bag_id, index and noise flag are preserved.
inline Instance augment(const Instance& inst, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw ArgumentError("augment: sigma must be >= 0");
    Instance out = inst;
    Rng rng(derive_seed(seed, "resample/augment"));
    for (double& f : out.features) f += rng.normal(0.0, sigma);
    return out;
}

namespace detail {

inline std::string class_display_name(std::size_t c, std::size_t num_classes) {
    if (num_classes == kNumSubtypes) return subtype_name(subtype_from_ordinal(c));
    return "class " + std::to_string(c);
}

inline std::size_t median_count(std::vector<std::size_t> counts) {
    std::sort(counts.begin(), counts.end());
    const std::size_t n = counts.size();
    if (n % 2 == 1) return counts[n / 2];
    return (counts[n / 2 - 1] + counts[n / 2]) / 2;
}

} // namespace detail

// The per-class item count balance() will produce for this pool; 0 in the
// config resolves to the median class size.
inline std::size_t resolve_target(const std::vector<TrainItem>& pool, std::size_t num_classes,
                                  const ResampleConfig& cfg) {
    if (cfg.target_per_class > 0) return cfg.target_per_class;
    std::vector<std::size_t> counts(num_classes, 0);
    for (const auto& item : pool) {
        if (item.label >= num_classes)
            throw ArgumentError("resample: label " + std::to_string(item.label) + " out of range");
        ++counts[item.label];
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        if (counts[c] == 0)
            throw DataError("resample: " + detail::class_display_name(c, num_classes) +
                            " has no instances");
    return detail::median_count(counts);
}

// Per-epoch class-balanced sample: every class contributes exactly
// target_per_class items. Surplus classes are subsampled without replacement;
// deficit classes keep all originals and are topped up with augmented copies.
inline std::vector<TrainItem> balance(const std::vector<TrainItem>& pool,
                                      std::size_t num_classes, const ResampleConfig& cfg) {
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].label >= num_classes)
            throw ArgumentError("balance: label " + std::to_string(pool[i].label) +
                                " out of range");
        by_class[pool[i].label].push_back(i);
    }
    for (std::size_t c = 0; c < num_classes; ++c)
        if (by_class[c].empty())
            throw DataError("resample: " + detail::class_display_name(c, num_classes) +
                            " has no instances");
    const std::size_t target = resolve_target(pool, num_classes, cfg);
    if (target == 0) throw ConfigError("balance: target_per_class must be >= 1");

    Rng rng(derive_seed(cfg.seed, "resample/balance"));
    std::vector<TrainItem> out;
    out.reserve(num_classes * target);
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto idx = by_class[c];
        if (idx.size() >= target) {
            rng.shuffle(idx);
            for (std::size_t i = 0; i < target; ++i) out.push_back(pool[idx[i]]);
        } else {
            for (std::size_t i : idx) out.push_back(pool[i]);
            for (std::size_t i = idx.size(); i < target; ++i) {
                const TrainItem& origin = pool[idx[rng.index(idx.size())]];
                TrainItem item;
                item.src = origin.src;
                item.label = origin.label;
                item.features = augment(*origin.src, cfg.augment_sigma, rng.next_u64()).features;
                item.augmented = true;
                out.push_back(std::move(item));
            }
        }
    }
    return out;
}

} // namespace dpmil
