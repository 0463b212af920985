#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dpmil/errors.hpp"
#include "dpmil/rng.hpp"
#include "dpmil/text_io.hpp"

namespace dpmil {

// Ordinals are fixed: 0 LuminalA, 1 LuminalB, 2 Her2, 3 BasalLike.
enum class Subtype : int { LuminalA = 0, LuminalB = 1, Her2 = 2, BasalLike = 3 };

inline constexpr std::size_t kNumSubtypes = 4;

inline const char* subtype_name(Subtype s) {
    switch (s) {
        case Subtype::LuminalA: return "LuminalA";
        case Subtype::LuminalB: return "LuminalB";
        case Subtype::Her2: return "Her2";
        case Subtype::BasalLike: return "BasalLike";
    }
    return "?";
}

inline Subtype subtype_from_ordinal(std::size_t ordinal) {
    if (ordinal >= kNumSubtypes)
        throw ArgumentError("subtype ordinal out of range: " + std::to_string(ordinal));
    return static_cast<Subtype>(static_cast<int>(ordinal));
}

inline std::size_t ordinal(Subtype s) { return static_cast<std::size_t>(s); }

inline bool valid_resolution_tag(const std::string& tag) {
    return tag == "5X" || tag == "10X" || tag == "20X";
}

// One synthetic patch. is_noise is generator ground truth, consumed only by
// tests and reports, never by training code.
struct Instance {
    std::string bag_id;
    std::size_t index = 0;
    std::vector<double> features;
    bool is_noise = false;
    std::string resolution_tag = "10X";

    friend bool operator==(const Instance&, const Instance&) = default;
};

struct Bag {
    std::string bag_id;
    Subtype label = Subtype::LuminalA;
    std::vector<Instance> instances;

    friend bool operator==(const Bag&, const Bag&) = default;
};

using Dataset = std::vector<Bag>;

struct GenConfig {
    std::array<std::size_t, kNumSubtypes> bags_per_class{25, 30, 25, 20};
    std::size_t instances_min = 30;
    std::size_t instances_max = 60;
    double noise_fraction = 0.4;
    double class_center_separation = 4.0;
    double cluster_spread = 1.0;
    std::size_t feature_dim = 16;
    std::string resolution_tag = "10X";
    std::uint64_t seed = 1;

    void validate() const {
        for (std::size_t c = 0; c < kNumSubtypes; ++c)
            if (bags_per_class[c] == 0)
                throw ConfigError("gen: zero bags for class " +
                                  std::string(subtype_name(subtype_from_ordinal(c))));
        if (instances_min == 0 || instances_min > instances_max)
            throw ConfigError("gen: bad instances_per_bag range");
        if (noise_fraction < 0.0 || noise_fraction >= 1.0)
            throw ConfigError("gen: noise_fraction must be in [0, 1)");
        if (class_center_separation <= 0.0) throw ConfigError("gen: separation must be > 0");
        if (cluster_spread <= 0.0) throw ConfigError("gen: cluster_spread must be > 0");
        if (feature_dim < 4) throw ConfigError("gen: feature_dim must be >= 4");
        if (!valid_resolution_tag(resolution_tag))
            throw ConfigError("gen: resolution_tag must be one of 5X, 10X, 20X");
    }
};

namespace detail {

// Class centers sit on axes 0..3. The shared background mixture straddles the
// centroid of the class centers, equidistant from all four: benign tissue
// looks like a bit of everything, so its patches land in contested territory.
inline std::vector<double> class_center(std::size_t c, const GenConfig& cfg) {
    std::vector<double> center(cfg.feature_dim, 0.0);
    center[c] = cfg.class_center_separation;
    return center;
}

inline std::vector<double> background_center(std::size_t component, const GenConfig& cfg) {
    std::vector<double> center(cfg.feature_dim, 0.0);
    const double sep = cfg.class_center_separation;
    if (component == 0) {
        // flanks LuminalA toward LuminalB: benign tissue most resembles the
        // luminal subtypes, sitting off the A cluster along a class-relevant
        // direction
        center[0] = sep;
        center[1] = 0.6 * sep;
    } else {
        // ambiguous-mix component in the contested middle
        for (std::size_t j = 0; j < 4; ++j) center[j] = 0.35 * sep;
    }
    return center;
}

} // namespace detail

// Each bag holds ceil((1-noise_fraction)*n) instances around its class center
// and the rest from a two-component background mixture shared by all classes.
inline Dataset generate(const GenConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "synthdata/generate"));
    const std::array<std::vector<double>, kNumSubtypes> centers = {
        detail::class_center(0, cfg), detail::class_center(1, cfg), detail::class_center(2, cfg),
        detail::class_center(3, cfg)};
    const std::array<std::vector<double>, 2> bg = {detail::background_center(0, cfg),
                                                   detail::background_center(1, cfg)};
    const double bg_spread = 2.0 * cfg.cluster_spread;

    Dataset dataset;
    std::size_t bag_counter = 0;
    for (std::size_t c = 0; c < kNumSubtypes; ++c) {
        for (std::size_t b = 0; b < cfg.bags_per_class[c]; ++b) {
            Bag bag;
            char idbuf[16];
            std::snprintf(idbuf, sizeof(idbuf), "b%04zu", bag_counter++);
            bag.bag_id = idbuf;
            bag.label = subtype_from_ordinal(c);
            const std::size_t n = rng.range(cfg.instances_min, cfg.instances_max);
            const std::size_t n_disc = static_cast<std::size_t>(
                std::ceil((1.0 - cfg.noise_fraction) * static_cast<double>(n)));
            for (std::size_t i = 0; i < n; ++i) {
                Instance inst;
                inst.bag_id = bag.bag_id;
                inst.resolution_tag = cfg.resolution_tag;
                inst.features.resize(cfg.feature_dim);
                if (i < n_disc) {
                    inst.is_noise = false;
                    for (std::size_t j = 0; j < cfg.feature_dim; ++j)
                        inst.features[j] = rng.normal(centers[c][j], cfg.cluster_spread);
                } else {
                    inst.is_noise = true;
                    const std::size_t comp = rng.uniform() < 0.5 ? 0 : 1;
                    for (std::size_t j = 0; j < cfg.feature_dim; ++j)
                        inst.features[j] = rng.normal(bg[comp][j], bg_spread);
                }
                bag.instances.push_back(std::move(inst));
            }
            rng.shuffle(bag.instances);
            for (std::size_t i = 0; i < bag.instances.size(); ++i) bag.instances[i].index = i;
            dataset.push_back(std::move(bag));
        }
    }
    return dataset;
}

// Stratified per class; per-class train count = round(ratio * class count).
// Bags never straddle the split.
inline std::pair<Dataset, Dataset> split(const Dataset& dataset, double ratio,
                                         std::uint64_t seed) {
    if (ratio <= 0.0 || ratio >= 1.0) throw ArgumentError("split: ratio must be in (0, 1)");
    std::array<std::vector<std::size_t>, kNumSubtypes> by_class;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        by_class[ordinal(dataset[i].label)].push_back(i);

    Rng rng(derive_seed(seed, "synthdata/split"));
    std::vector<bool> in_train(dataset.size(), false);
    for (std::size_t c = 0; c < kNumSubtypes; ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) continue;
        if (idx.size() < 2)
            throw DataError("split: class " + std::string(subtype_name(subtype_from_ordinal(c))) +
                            " has fewer than 2 bags");
        rng.shuffle(idx);
        const auto train_count = static_cast<std::size_t>(
            std::lround(ratio * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < train_count; ++i) in_train[idx[i]] = true;
    }
    Dataset train, val;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        (in_train[i] ? train : val).push_back(dataset[i]);
    return {std::move(train), std::move(val)};
}

// "bags v1 dim=<d>" header, then one CSV line per instance.
inline void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    std::size_t dim = 0;
    for (const auto& bag : dataset)
        if (!bag.instances.empty()) {
            dim = bag.instances.front().features.size();
            break;
        }
    std::string out = "bags v1 dim=" + std::to_string(dim) + "\n";
    for (const auto& bag : dataset) {
        for (const auto& inst : bag.instances) {
            out += inst.bag_id;
            out += ',';
            out += std::to_string(ordinal(bag.label));
            out += ',';
            out += std::to_string(inst.index);
            out += ',';
            out += inst.is_noise ? '1' : '0';
            out += ',';
            out += inst.resolution_tag;
            for (double f : inst.features) {
                out += ',';
                out += format_double(f);
            }
            out += '\n';
        }
    }
    write_file(path, out);
}

inline Dataset read_dataset(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    const std::string name = path.string();
    if (lines.empty()) throw ParseError(name, 1, "empty file, expected 'bags v1' header");
    const auto& header = lines[0];
    if (header.rfind("bags v1 dim=", 0) != 0)
        throw ParseError(name, 1, "expected 'bags v1 dim=<d>' header");
    const std::size_t dim =
        static_cast<std::size_t>(parse_u64(header.substr(12), name + ":1"));

    Dataset dataset;
    std::map<std::string, std::size_t> bag_pos;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto toks = split(lines[ln], ',');
        if (toks.size() != 5 + dim)
            throw ParseError(name, ln + 1,
                             "expected " + std::to_string(5 + dim) + " fields, got " +
                                 std::to_string(toks.size()));
        const std::string ctx = name + ":" + std::to_string(ln + 1);
        Instance inst;
        inst.bag_id = toks[0];
        const std::size_t label_ord = static_cast<std::size_t>(parse_u64(toks[1], ctx));
        if (label_ord >= kNumSubtypes) throw ParseError(name, ln + 1, "class ordinal out of range");
        inst.index = static_cast<std::size_t>(parse_u64(toks[2], ctx));
        if (toks[3] != "0" && toks[3] != "1")
            throw ParseError(name, ln + 1, "is_noise must be 0 or 1");
        inst.is_noise = toks[3] == "1";
        inst.resolution_tag = toks[4];
        if (!valid_resolution_tag(inst.resolution_tag))
            throw ParseError(name, ln + 1, "unknown resolution tag '" + inst.resolution_tag + "'");
        inst.features.resize(dim);
        for (std::size_t j = 0; j < dim; ++j) inst.features[j] = parse_double(toks[5 + j], ctx);

        auto it = bag_pos.find(inst.bag_id);
        if (it == bag_pos.end()) {
            Bag bag;
            bag.bag_id = inst.bag_id;
            bag.label = subtype_from_ordinal(label_ord);
            bag_pos.emplace(inst.bag_id, dataset.size());
            dataset.push_back(std::move(bag));
            it = bag_pos.find(inst.bag_id);
        } else if (ordinal(dataset[it->second].label) != label_ord) {
            throw ParseError(name, ln + 1, "bag '" + inst.bag_id + "' has conflicting labels");
        }
        dataset[it->second].instances.push_back(std::move(inst));
    }
    return dataset;
}

} // namespace dpmil
