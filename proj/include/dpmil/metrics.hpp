#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpmil/errors.hpp"
#include "dpmil/text_io.hpp"

namespace dpmil {

// Confusion matrix (rows = truth) plus the four headline metrics.
// Undefined ratios (0/0) resolve to 0, which penalizes never-predicted classes.
struct MetricsReport {
    std::string stage;
    std::size_t num_classes = 0;
    std::vector<std::vector<std::size_t>> confusion;
    double accuracy = 0.0;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f1;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
};

inline MetricsReport metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion,
                                            std::string stage) {
    MetricsReport r;
    r.stage = std::move(stage);
    r.num_classes = confusion.size();
    r.confusion = std::move(confusion);
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < r.num_classes; ++i) {
        for (std::size_t j = 0; j < r.num_classes; ++j) total += r.confusion[i][j];
        correct += r.confusion[i][i];
    }
    if (total == 0) throw ArgumentError("metrics: no samples");
    r.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    r.precision.resize(r.num_classes);
    r.recall.resize(r.num_classes);
    r.f1.resize(r.num_classes);
    for (std::size_t c = 0; c < r.num_classes; ++c) {
        std::size_t tp = r.confusion[c][c], fp = 0, fn = 0;
        for (std::size_t o = 0; o < r.num_classes; ++o) {
            if (o == c) continue;
            fp += r.confusion[o][c];
            fn += r.confusion[c][o];
        }
        r.precision[c] = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        r.recall[c] = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        r.f1[c] = (r.precision[c] + r.recall[c]) > 0.0
                      ? 2.0 * r.precision[c] * r.recall[c] / (r.precision[c] + r.recall[c])
                      : 0.0;
        r.macro_precision += r.precision[c];
        r.macro_recall += r.recall[c];
        r.macro_f1 += r.f1[c];
    }
    r.macro_precision /= static_cast<double>(r.num_classes);
    r.macro_recall /= static_cast<double>(r.num_classes);
    r.macro_f1 /= static_cast<double>(r.num_classes);
    return r;
}

inline MetricsReport compute_metrics(std::span<const std::size_t> predictions,
                                     std::span<const std::size_t> truths,
                                     std::size_t num_classes, std::string stage = "") {
    if (predictions.size() != truths.size())
        throw ArgumentError("metrics: predictions/truths length mismatch");
    if (predictions.empty()) throw ArgumentError("metrics: empty input");
    std::vector<std::vector<std::size_t>> confusion(num_classes,
                                                    std::vector<std::size_t>(num_classes, 0));
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (truths[i] >= num_classes || predictions[i] >= num_classes)
            throw ArgumentError("metrics: class out of range at sample " + std::to_string(i));
        ++confusion[truths[i]][predictions[i]];
    }
    return metrics_from_confusion(std::move(confusion), std::move(stage));
}

inline double macro_f1(std::span<const std::size_t> predictions,
                       std::span<const std::size_t> truths, std::size_t num_classes) {
    return compute_metrics(predictions, truths, num_classes).macro_f1;
}

// Report CSV: one metrics row per stage, then per-stage confusion blocks.
inline void write_report(const std::vector<MetricsReport>& reports,
                         const std::filesystem::path& path) {
    std::string out = "stage,accuracy,precision_macro,recall_macro,f1_macro,f1_A,f1_B,f1_H,f1_BL\n";
    for (const auto& r : reports) {
        if (r.num_classes != 4)
            throw ArgumentError("write_report: report format is four-class (stage '" + r.stage +
                                "' has " + std::to_string(r.num_classes) + ")");
        out += r.stage;
        out += ',' + format_double(r.accuracy);
        out += ',' + format_double(r.macro_precision);
        out += ',' + format_double(r.macro_recall);
        out += ',' + format_double(r.macro_f1);
        for (std::size_t c = 0; c < 4; ++c) out += ',' + format_double(r.f1[c]);
        out += '\n';
    }
    for (const auto& r : reports) {
        out += "confusion," + r.stage + ',' + std::to_string(r.num_classes) + '\n';
        for (const auto& row : r.confusion) {
            for (std::size_t j = 0; j < row.size(); ++j) {
                if (j) out += ',';
                out += std::to_string(row[j]);
            }
            out += '\n';
        }
    }
    write_file(path, out);
}

inline std::vector<MetricsReport> read_report(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    const std::string name = path.string();
    if (lines.empty() || lines[0].rfind("stage,accuracy,", 0) != 0)
        throw ParseError(name, 1, "expected report header");
    std::vector<std::pair<std::string, double>> stage_f1;
    std::size_t ln = 1;
    for (; ln < lines.size() && lines[ln].rfind("confusion,", 0) != 0; ++ln) {
        if (lines[ln].empty()) continue;
        const auto toks = split(lines[ln], ',');
        if (toks.size() != 9) throw ParseError(name, ln + 1, "expected 9 columns");
        stage_f1.emplace_back(toks[0], parse_double(toks[4], name));
    }
    std::vector<MetricsReport> reports;
    for (const auto& [stage, f1] : stage_f1) {
        if (ln >= lines.size() || lines[ln].rfind("confusion,", 0) != 0)
            throw ParseError(name, ln + 1, "missing confusion block for stage '" + stage + "'");
        const auto head = split(lines[ln], ',');
        if (head.size() != 3 || head[1] != stage)
            throw ParseError(name, ln + 1, "confusion block out of order");
        const auto m = static_cast<std::size_t>(parse_u64(head[2], name));
        ++ln;
        std::vector<std::vector<std::size_t>> confusion(m, std::vector<std::size_t>(m, 0));
        for (std::size_t i = 0; i < m; ++i, ++ln) {
            if (ln >= lines.size()) throw ParseError(name, ln + 1, "truncated confusion block");
            const auto toks = split(lines[ln], ',');
            if (toks.size() != m) throw ParseError(name, ln + 1, "bad confusion row arity");
            for (std::size_t j = 0; j < m; ++j)
                confusion[i][j] =
                    static_cast<std::size_t>(parse_u64(toks[j], name + ":" + std::to_string(ln + 1)));
        }
        MetricsReport r = metrics_from_confusion(std::move(confusion), stage);
        if (std::abs(r.macro_f1 - f1) > 1e-12)
            throw ParseError(name, 1, "stored macro F1 disagrees with confusion matrix for '" +
                                          stage + "'");
        reports.push_back(std::move(r));
    }
    return reports;
}

} // namespace dpmil
