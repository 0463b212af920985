#pragma once

#include <cstddef>
#include <vector>

#include "dpmil/synthdata.hpp"

namespace dpmil {

// A bag paired with the label ordinal a trainer should use. Binary one-vs-rest
// pipelines relabel here without copying instance data.
struct LabeledBag {
    const Bag* bag = nullptr;
    std::size_t label = 0;
};

using BagView = std::vector<LabeledBag>;

inline BagView as_views(const Dataset& dataset) {
    BagView views;
    views.reserve(dataset.size());
    for (const auto& bag : dataset) views.push_back({&bag, ordinal(bag.label)});
    return views;
}

// label 1 = target subtype, label 0 = pooled rest
inline BagView binary_views(const Dataset& dataset, Subtype target) {
    BagView views;
    views.reserve(dataset.size());
    for (const auto& bag : dataset)
        views.push_back({&bag, bag.label == target ? std::size_t{1} : std::size_t{0}});
    return views;
}

// One training sample: an instance carrying its bag's label. Every instance
// inherits the label of the bag it came from.
struct TrainItem {
    const Instance* src = nullptr;
    std::size_t label = 0;
    std::vector<double> features;
    bool augmented = false;
};

inline std::vector<TrainItem> instance_pool(const BagView& bags) {
    std::vector<TrainItem> pool;
    for (const auto& lb : bags)
        for (const auto& inst : lb.bag->instances)
            pool.push_back({&inst, lb.label, inst.features, false});
    return pool;
}

} // namespace dpmil
