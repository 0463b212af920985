#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dpmil/errors.hpp"
#include "dpmil/matrix.hpp"
#include "dpmil/rng.hpp"
#include "dpmil/text_io.hpp"

namespace dpmil {

inline constexpr double kLogClamp = 1e-12;

// Feed-forward classifier: rectifier on hidden layers, softmax on the output.
// weights[l] is (layer_dims[l] x layer_dims[l+1]); biases[l] has layer_dims[l+1].
struct MlpModel {
    std::vector<std::size_t> layer_dims;
    std::vector<DenseMatrix> weights;
    std::vector<std::vector<double>> biases;

    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t num_classes() const { return layer_dims.back(); }
    std::size_t num_layers() const { return weights.size(); }

    // Glorot-uniform weights, zero biases.
    static MlpModel init(std::vector<std::size_t> dims, std::uint64_t seed) {
        if (dims.size() < 2) throw ConfigError("mlp: need at least input and output dims");
        for (std::size_t d : dims)
            if (d == 0) throw ConfigError("mlp: zero layer dim");
        MlpModel m;
        m.layer_dims = std::move(dims);
        Rng rng(seed);
        for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
            const std::size_t fan_in = m.layer_dims[l];
            const std::size_t fan_out = m.layer_dims[l + 1];
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            DenseMatrix w(fan_in, fan_out);
            for (double& v : w.values) v = rng.uniform(-bound, bound);
            m.weights.push_back(std::move(w));
            m.biases.emplace_back(fan_out, 0.0);
        }
        return m;
    }

    friend bool operator==(const MlpModel& a, const MlpModel& b) {
        return a.layer_dims == b.layer_dims && a.weights == b.weights && a.biases == b.biases;
    }
};

inline void softmax_rows(DenseMatrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        auto r = m.row(i);
        double mx = r[0];
        for (double v : r) mx = std::max(mx, v);
        double sum = 0.0;
        for (double& v : r) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : r) v /= sum;
    }
}

// Per-layer activations kept for backprop. acts[0] is the input batch,
// acts.back() the softmax probabilities; preacts[l] is the input to layer
// l's nonlinearity.
struct ForwardCache {
    std::vector<DenseMatrix> preacts;
    std::vector<DenseMatrix> acts;

    const DenseMatrix& probs() const { return acts.back(); }
    // activation feeding the classification layer
    const DenseMatrix& penultimate() const { return acts[acts.size() - 2]; }
};

inline ForwardCache forward_cache(const MlpModel& model, const DenseMatrix& batch) {
    if (batch.cols != model.input_dim())
        throw ShapeError("forward: batch has " + std::to_string(batch.cols) +
                         " features, model expects " + std::to_string(model.input_dim()));
    ForwardCache cache;
    cache.acts.push_back(batch);
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        DenseMatrix z = matmul(cache.acts.back(), model.weights[l]);
        for (std::size_t i = 0; i < z.rows; ++i) {
            auto r = z.row(i);
            for (std::size_t j = 0; j < z.cols; ++j) r[j] += model.biases[l][j];
        }
        cache.preacts.push_back(z);
        if (l + 1 < model.num_layers()) {
            for (double& v : z.values) v = std::max(v, 0.0);
        } else {
            softmax_rows(z);
        }
        cache.acts.push_back(std::move(z));
    }
    return cache;
}

struct ForwardResult {
    DenseMatrix probs;
    DenseMatrix penultimate;
};

inline ForwardResult forward(const MlpModel& model, const DenseMatrix& batch) {
    ForwardCache cache = forward_cache(model, batch);
    return {cache.probs(), cache.penultimate()};
}

inline double cross_entropy(std::span<const double> probs, std::size_t label) {
    if (label >= probs.size())
        throw ArgumentError("cross_entropy: label " + std::to_string(label) + " out of range " +
                            std::to_string(probs.size()));
    return -std::log(std::max(probs[label], kLogClamp));
}

struct Gradients {
    std::vector<DenseMatrix> dweights;
    std::vector<std::vector<double>> dbiases;
};

// Backprop from dL/dlogits (gradient at the output layer's pre-softmax input).
inline Gradients backward_from_logit_grad(const MlpModel& model, const ForwardCache& cache,
                                          DenseMatrix dz) {
    Gradients g;
    g.dweights.resize(model.num_layers());
    g.dbiases.resize(model.num_layers());
    for (std::size_t l = model.num_layers(); l-- > 0;) {
        g.dweights[l] = matmul_at_b(cache.acts[l], dz);
        std::vector<double> db(model.layer_dims[l + 1], 0.0);
        for (std::size_t i = 0; i < dz.rows; ++i) {
            auto r = dz.row(i);
            for (std::size_t j = 0; j < dz.cols; ++j) db[j] += r[j];
        }
        g.dbiases[l] = std::move(db);
        if (!g.dweights[l].all_finite())
            throw NumericError("non-finite gradient at layer " + std::to_string(l));
        if (l > 0) {
            DenseMatrix da = matmul_a_bt(dz, model.weights[l]);
            // rectifier derivative on the preactivation
            const DenseMatrix& z = cache.preacts[l - 1];
            for (std::size_t i = 0; i < da.values.size(); ++i)
                if (z.values[i] <= 0.0) da.values[i] = 0.0;
            dz = std::move(da);
        }
    }
    return g;
}

// Backprop from dL/dprobs (gradient at the softmax output), folding in the
// softmax Jacobian row by row.
inline Gradients backward_from_prob_grad(const MlpModel& model, const ForwardCache& cache,
                                         const DenseMatrix& dprobs) {
    const DenseMatrix& p = cache.probs();
    if (!dprobs.same_shape(p)) throw ShapeError("backward_from_prob_grad: shape mismatch");
    DenseMatrix dz(p.rows, p.cols);
    for (std::size_t i = 0; i < p.rows; ++i) {
        auto pr = p.row(i);
        auto gr = dprobs.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < p.cols; ++j) dot += gr[j] * pr[j];
        auto zr = dz.row(i);
        for (std::size_t j = 0; j < p.cols; ++j) zr[j] = pr[j] * (gr[j] - dot);
    }
    return backward_from_logit_grad(model, cache, std::move(dz));
}

// Gradient of the mean cross-entropy over the batch.
inline Gradients grad_cross_entropy(const MlpModel& model, const ForwardCache& cache,
                                    std::span<const std::size_t> labels) {
    const DenseMatrix& p = cache.probs();
    if (labels.size() != p.rows) throw ShapeError("grad_cross_entropy: labels/batch mismatch");
    DenseMatrix dz = p;
    const double inv_n = 1.0 / static_cast<double>(p.rows);
    for (std::size_t i = 0; i < p.rows; ++i) {
        if (labels[i] >= p.cols)
            throw ArgumentError("grad_cross_entropy: label out of range at sample " +
                                std::to_string(i));
        auto r = dz.row(i);
        r[labels[i]] -= 1.0;
        for (std::size_t j = 0; j < p.cols; ++j) r[j] *= inv_n;
    }
    return backward_from_logit_grad(model, cache, std::move(dz));
}

inline void apply_gradients(MlpModel& model, const Gradients& g, double lr) {
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        for (std::size_t i = 0; i < model.weights[l].values.size(); ++i)
            model.weights[l].values[i] -= lr * g.dweights[l].values[i];
        for (std::size_t j = 0; j < model.biases[l].size(); ++j)
            model.biases[l][j] -= lr * g.dbiases[l][j];
    }
}

struct OptimizerState {
    double lr0 = 0.01;
    double power = 0.9;
    std::size_t step = 0;
    std::size_t total_steps = 1;
    std::size_t batch_size = 32;
};

// lr0 * (1 - step/total_steps)^power
inline double poly_lr(const OptimizerState& opt) {
    const double frac =
        std::min(1.0, static_cast<double>(opt.step) / static_cast<double>(opt.total_steps));
    return opt.lr0 * std::pow(1.0 - frac, opt.power);
}

// One SGD step on the mean cross-entropy. Returns the per-sample losses
// computed before the parameter update; advances opt.step.
inline std::vector<double> sgd_step(MlpModel& model, const DenseMatrix& batch,
                                    std::span<const std::size_t> labels, OptimizerState& opt) {
    if (batch.rows != labels.size()) throw ShapeError("sgd_step: batch/labels size mismatch");
    ForwardCache cache = forward_cache(model, batch);
    std::vector<double> losses(batch.rows);
    for (std::size_t i = 0; i < batch.rows; ++i)
        losses[i] = cross_entropy(cache.probs().row(i), labels[i]);
    Gradients g = grad_cross_entropy(model, cache, labels);
    apply_gradients(model, g, poly_lr(opt));
    ++opt.step;
    return losses;
}

namespace detail {

inline double mean_ce_loss(const MlpModel& model, const DenseMatrix& batch,
                           std::span<const std::size_t> labels) {
    ForwardCache cache = forward_cache(model, batch);
    double sum = 0.0;
    for (std::size_t i = 0; i < batch.rows; ++i)
        sum += cross_entropy(cache.probs().row(i), labels[i]);
    return sum / static_cast<double>(batch.rows);
}

inline double fd_relative_error(double analytic, double numeric) {
    const double denom = std::max(std::abs(analytic), std::abs(numeric));
    const double diff = std::abs(analytic - numeric);
    // absolute fallback where the gradient vanishes
    return denom > 1e-6 ? diff / denom : diff;
}

} // namespace detail

// Central finite differences over every parameter against the analytic
// gradient of the mean cross-entropy; returns the max relative error.
inline double grad_check(const MlpModel& model, const DenseMatrix& batch,
                         std::span<const std::size_t> labels, double epsilon) {
    if (epsilon <= 0.0 || epsilon > 1e-3)
        throw ArgumentError("grad_check: epsilon must be in (0, 1e-3]");
    ForwardCache cache = forward_cache(model, batch);
    Gradients g = grad_cross_entropy(model, cache, labels);

    MlpModel probe = model;
    double max_err = 0.0;
    auto check_param = [&](double& theta, double analytic) {
        const double saved = theta;
        theta = saved + epsilon;
        const double plus = detail::mean_ce_loss(probe, batch, labels);
        theta = saved - epsilon;
        const double minus = detail::mean_ce_loss(probe, batch, labels);
        theta = saved;
        const double numeric = (plus - minus) / (2.0 * epsilon);
        max_err = std::max(max_err, detail::fd_relative_error(analytic, numeric));
    };
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        for (std::size_t i = 0; i < probe.weights[l].values.size(); ++i)
            check_param(probe.weights[l].values[i], g.dweights[l].values[i]);
        for (std::size_t j = 0; j < probe.biases[l].size(); ++j)
            check_param(probe.biases[l][j], g.dbiases[l][j]);
    }
    return max_err;
}

// Checkpoint: "mlp v1", layer dims, then one line per weight matrix and bias
// vector at 17 significant digits (round-trip exact).
inline void save_model(const MlpModel& model, const std::filesystem::path& path) {
    std::string out = "mlp v1\n";
    for (std::size_t i = 0; i < model.layer_dims.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(model.layer_dims[i]);
    }
    out += '\n';
    auto append_values = [&out](std::span<const double> vals) {
        for (std::size_t i = 0; i < vals.size(); ++i) {
            if (i) out += ' ';
            out += format_double(vals[i]);
        }
        out += '\n';
    };
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        append_values(model.weights[l].values);
        append_values(model.biases[l]);
    }
    write_file(path, out);
}

inline MlpModel load_model(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    const std::string name = path.string();
    if (lines.empty() || lines[0] != "mlp v1") throw ParseError(name, 1, "expected 'mlp v1' header");
    if (lines.size() < 2) throw ParseError(name, 2, "missing layer dims");
    MlpModel m;
    for (const auto& tok : split(lines[1], ' ')) {
        if (tok.empty()) continue;
        m.layer_dims.push_back(static_cast<std::size_t>(parse_u64(tok, name + ":2")));
    }
    if (m.layer_dims.size() < 2) throw ParseError(name, 2, "need at least two layer dims");
    std::size_t lineno = 2;
    auto read_values = [&](std::size_t count, std::vector<double>& dst) {
        ++lineno;
        if (lineno > lines.size()) throw ParseError(name, lineno, "unexpected end of file");
        const auto toks = split(lines[lineno - 1], ' ');
        if (toks.size() != count)
            throw ParseError(name, lineno,
                             "expected " + std::to_string(count) + " values, got " +
                                 std::to_string(toks.size()));
        dst.resize(count);
        for (std::size_t i = 0; i < count; ++i)
            dst[i] = parse_double(toks[i], name + ":" + std::to_string(lineno));
    };
    for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
        DenseMatrix w(m.layer_dims[l], m.layer_dims[l + 1]);
        read_values(w.rows * w.cols, w.values);
        m.weights.push_back(std::move(w));
        std::vector<double> b;
        read_values(m.layer_dims[l + 1], b);
        m.biases.push_back(std::move(b));
    }
    if (lineno != lines.size() && !(lineno + 1 == lines.size() && lines.back().empty()))
        throw ParseError(name, lineno + 1, "trailing content after parameters");
    return m;
}

} // namespace dpmil
