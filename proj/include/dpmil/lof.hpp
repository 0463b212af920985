#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dpmil/coteach.hpp"
#include "dpmil/errors.hpp"
#include "dpmil/matrix.hpp"
#include "dpmil/rng.hpp"
#include "dpmil/text_io.hpp"

namespace dpmil {

struct LofParams {
    std::size_t k = 20; // MinPts
    double theta = 1.5;
    std::size_t cap_per_class = 2000;
    std::uint64_t seed = 0;

    void validate() const {
        if (k == 0) throw ConfigError("lof: k must be >= 1");
        if (theta < 1.0) throw ConfigError("lof: theta must be >= 1");
        if (cap_per_class < k + 1) throw ConfigError("lof: cap_per_class must be >= k + 1");
    }
};

// Local Outlier Factor with the reference definitions: k-distance includes
// every point tied at that distance, reach-dist(p,o) = max(kdist(o), d(p,o)),
// lrd(p) = |N(p)| / sum of reach distances (+inf when the sum is 0), and
// LOF(p) = mean over neighbors of lrd(o)/lrd(p) with inf/inf taken as 1.
inline std::vector<double> lof_scores(const std::vector<std::vector<double>>& points,
                                      std::size_t k) {
    const std::size_t n = points.size();
    if (k == 0) throw ArgumentError("lof_scores: k must be >= 1");
    if (n < k + 1)
        throw ArgumentError("lof_scores: need at least k + 1 = " + std::to_string(k + 1) +
                            " points, got " + std::to_string(n));

    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = std::sqrt(squared_distance(points[i], points[j]));
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }

    std::vector<double> kdist(n, 0.0);
    std::vector<std::vector<std::size_t>> neighbors(n);
    std::vector<double> others;
    others.reserve(n - 1);
    for (std::size_t p = 0; p < n; ++p) {
        others.clear();
        for (std::size_t o = 0; o < n; ++o)
            if (o != p) others.push_back(dist[p * n + o]);
        std::nth_element(others.begin(), others.begin() + (k - 1), others.end());
        kdist[p] = others[k - 1];
        for (std::size_t o = 0; o < n; ++o)
            if (o != p && dist[p * n + o] <= kdist[p]) neighbors[p].push_back(o);
    }

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> lrd(n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        double sum = 0.0;
        for (std::size_t o : neighbors[p]) sum += std::max(kdist[o], dist[p * n + o]);
        lrd[p] = sum > 0.0 ? static_cast<double>(neighbors[p].size()) / sum : kInf;
    }

    std::vector<double> scores(n, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        double sum = 0.0;
        for (std::size_t o : neighbors[p]) {
            double ratio;
            if (std::isinf(lrd[o]) && std::isinf(lrd[p])) ratio = 1.0;
            else if (std::isinf(lrd[p])) ratio = 0.0;
            else if (std::isinf(lrd[o])) ratio = kInf;
            else ratio = lrd[o] / lrd[p];
            sum += ratio;
        }
        scores[p] = sum / static_cast<double>(neighbors[p].size());
    }
    return scores;
}

struct DenoiseClassReport {
    std::size_t class_ordinal = 0;
    std::size_t input_count = 0;
    std::size_t capped_count = 0;
    std::size_t kept = 0;
    std::size_t dropped = 0;
    bool pass_through = false; // too few candidates to score; everything kept
    double theta = 0.0;
    std::size_t k = 0;
};

struct DenoiseReport {
    std::vector<DenoiseClassReport> rows;
};

// Score one class's candidate features and keep LOF <= theta. Candidate sets
// above the cap are first subsampled uniformly (seeded). Sets of size <= k
// pass through untouched: dropping everything would starve training.
inline std::pair<std::vector<Candidate>, DenoiseClassReport> filter_class(
    const std::vector<Candidate>& candidates, std::size_t class_ordinal, const LofParams& params) {
    params.validate();
    DenoiseClassReport report;
    report.class_ordinal = class_ordinal;
    report.input_count = candidates.size();
    report.theta = params.theta;
    report.k = params.k;

    if (candidates.size() <= params.k) {
        report.capped_count = candidates.size();
        report.kept = candidates.size();
        report.dropped = 0;
        report.pass_through = true;
        return {candidates, report};
    }

    std::vector<std::size_t> idx(candidates.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > params.cap_per_class) {
        Rng rng(derive_seed(params.seed, "lof/cap", class_ordinal));
        rng.shuffle(idx);
        idx.resize(params.cap_per_class);
        std::sort(idx.begin(), idx.end());
    }
    report.capped_count = idx.size();

    std::vector<std::vector<double>> features;
    features.reserve(idx.size());
    for (std::size_t i : idx) features.push_back(candidates[i].feature);
    const std::vector<double> scores = lof_scores(features, params.k);

    std::vector<Candidate> kept;
    for (std::size_t i = 0; i < idx.size(); ++i)
        if (scores[i] <= params.theta) kept.push_back(candidates[idx[i]]);
    report.kept = kept.size();
    report.dropped = report.capped_count - report.kept;
    return {std::move(kept), report};
}

inline std::pair<std::vector<std::vector<Candidate>>, DenoiseReport> filter_all_classes(
    const std::vector<std::vector<Candidate>>& per_class, const LofParams& params) {
    std::vector<std::vector<Candidate>> kept(per_class.size());
    DenoiseReport report;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        auto [k, row] = filter_class(per_class[c], c, params);
        kept[c] = std::move(k);
        report.rows.push_back(row);
    }
    return {std::move(kept), std::move(report)};
}

// "denoise-report v1" CSV
inline void write_denoise_report(const DenoiseReport& report, const std::filesystem::path& path) {
    std::string out = "denoise-report v1\n";
    out += "class,input_count,capped_count,kept,dropped,theta,k\n";
    for (const auto& r : report.rows) {
        out += std::to_string(r.class_ordinal) + ',' + std::to_string(r.input_count) + ',' +
               std::to_string(r.capped_count) + ',' + std::to_string(r.kept) + ',' +
               std::to_string(r.dropped) + ',' + format_double(r.theta) + ',' +
               std::to_string(r.k) + '\n';
    }
    write_file(path, out);
}

inline DenoiseReport read_denoise_report(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    const std::string name = path.string();
    if (lines.empty() || lines[0] != "denoise-report v1")
        throw ParseError(name, 1, "expected 'denoise-report v1' header");
    if (lines.size() < 2 || lines[1] != "class,input_count,capped_count,kept,dropped,theta,k")
        throw ParseError(name, 2, "expected column header");
    DenoiseReport report;
    for (std::size_t ln = 2; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto toks = split(lines[ln], ',');
        if (toks.size() != 7) throw ParseError(name, ln + 1, "expected 7 columns");
        const std::string ctx = name + ":" + std::to_string(ln + 1);
        DenoiseClassReport r;
        r.class_ordinal = static_cast<std::size_t>(parse_u64(toks[0], ctx));
        r.input_count = static_cast<std::size_t>(parse_u64(toks[1], ctx));
        r.capped_count = static_cast<std::size_t>(parse_u64(toks[2], ctx));
        r.kept = static_cast<std::size_t>(parse_u64(toks[3], ctx));
        r.dropped = static_cast<std::size_t>(parse_u64(toks[4], ctx));
        r.theta = parse_double(toks[5], ctx);
        r.k = static_cast<std::size_t>(parse_u64(toks[6], ctx));
        r.pass_through = r.input_count <= r.k;
        report.rows.push_back(r);
    }
    return report;
}

} // namespace dpmil
