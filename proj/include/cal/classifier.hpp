#pragma once

#include "corpus.hpp"
#include "embed.hpp"
#include "error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace cal {

struct ProbPair {
    double yes = 0.5;
    double no = 0.5;

    double of(Label l) const { return l == Label::yes ? yes : no; }
};

struct TrainConfig {
    double l2 = 1e-3;
    int max_epochs = 300;
    bool class_weighting = true;
    std::uint64_t seed = 0;

    bool operator==(const TrainConfig&) const = default;
};

struct Example {
    SparseVector x;
    Label y = Label::no;
};

/// Binary logistic regression over sparse TF-IDF features.
struct Model {
    std::vector<double> weights;
    double bias = 0.0;
    TrainConfig config;
    int version = 0;
    /// Single-class training data: predictions are the clipped class prior.
    bool degenerate = false;
    double constant_p_yes = 0.5;

    std::size_t dim() const { return weights.size(); }

    bool operator==(const Model&) const = default;
};

inline double logistic(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

struct Objective {
    double loss = 0.0;
    std::vector<double> grad_w;
    double grad_b = 0.0;
};

/// Per-class weights N / (2 N_y), or all ones.
inline std::array<double, 2> class_weights(std::span<const Example> examples, bool weighting) {
    std::array<double, 2> counts{0.0, 0.0};
    for (const auto& e : examples) {
        counts[index_of(e.y)] += 1.0;
    }
    const double n = counts[0] + counts[1];
    if (!weighting || counts[0] == 0.0 || counts[1] == 0.0) {
        return {1.0, 1.0};
    }
    return {n / (2.0 * counts[0]), n / (2.0 * counts[1])};
}

/// Weighted mean log-loss plus (l2/2)|w|^2; the bias is not penalized.
inline Objective objective(std::span<const Example> examples, std::span<const double> w, double b,
                           const TrainConfig& cfg, bool with_gradient = true) {
    const auto cw = class_weights(examples, cfg.class_weighting);
    const double inv_n = 1.0 / static_cast<double>(examples.size());
    Objective out;
    if (with_gradient) {
        out.grad_w.assign(w.size(), 0.0);
    }
    double data_loss = 0.0;
    double gb = 0.0;
    for (const auto& e : examples) {
        const double z = e.x.dot(w) + b;
        const double y = e.y == Label::yes ? 1.0 : 0.0;
        const double c = cw[index_of(e.y)];
        data_loss += c * (softplus(z) - y * z);
        if (with_gradient) {
            const double r = c * (logistic(z) - y) * inv_n;
            for (const auto& [i, v] : e.x.entries) {
                out.grad_w[i] += r * v;
            }
            gb += r;
        }
    }
    double sq = 0.0;
    for (double wi : w) {
        sq += wi * wi;
    }
    out.loss = data_loss * inv_n + 0.5 * cfg.l2 * sq;
    if (with_gradient) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            out.grad_w[i] += cfg.l2 * w[i];
        }
        out.grad_b = gb;
    }
    return out;
}

/// Full-batch gradient descent from zero with Armijo backtracking, so the
/// objective never increases between epochs. `loss_trace`, when given,
/// receives the objective before the first epoch and after each one.
inline Model train(std::span<const Example> examples, std::size_t dim, const TrainConfig& cfg, int version = 1,
                   std::vector<double>* loss_trace = nullptr) {
    if (examples.empty()) {
        throw Error(ErrorCode::precondition, "cannot train on an empty example set");
    }
    if (!(cfg.l2 > 0.0) || cfg.max_epochs < 0) {
        throw Error(ErrorCode::bad_request, "train config needs l2 > 0 and max_epochs >= 0");
    }
    for (const auto& e : examples) {
        if (e.x.dim != dim) {
            throw Error(ErrorCode::bad_request, "example dimension " + std::to_string(e.x.dim) +
                                                    " does not match model dimension " + std::to_string(dim));
        }
    }
    Model m;
    m.weights.assign(dim, 0.0);
    m.config = cfg;
    m.version = version;

    std::size_t n_yes = 0;
    for (const auto& e : examples) {
        n_yes += e.y == Label::yes;
    }
    if (n_yes == 0 || n_yes == examples.size()) {
        const double prior = static_cast<double>(n_yes) / static_cast<double>(examples.size());
        m.degenerate = true;
        m.constant_p_yes = std::clamp(prior, 0.01, 0.99);
        m.bias = std::log(m.constant_p_yes / (1.0 - m.constant_p_yes));
        return m;
    }

    auto current = objective(examples, m.weights, m.bias, cfg);
    if (loss_trace) {
        loss_trace->push_back(current.loss);
    }
    std::vector<double> trial(dim);
    double step = 1.0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        double gsq = current.grad_b * current.grad_b;
        for (double g : current.grad_w) {
            gsq += g * g;
        }
        if (gsq < 1e-24) {
            break;
        }
        bool accepted = false;
        for (int halvings = 0; halvings < 60; ++halvings) {
            for (std::size_t i = 0; i < dim; ++i) {
                trial[i] = m.weights[i] - step * current.grad_w[i];
            }
            const double trial_b = m.bias - step * current.grad_b;
            const double trial_loss = objective(examples, trial, trial_b, cfg, false).loss;
            if (trial_loss <= current.loss - 1e-4 * step * gsq) {
                m.weights.swap(trial);
                m.bias = trial_b;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            break;
        }
        current = objective(examples, m.weights, m.bias, cfg);
        if (loss_trace) {
            loss_trace->push_back(current.loss);
        }
        step = std::min(step * 2.0, 1024.0);
    }
    return m;
}

inline double decision_value(const Model& m, const SparseVector& x) {
    if (x.dim != m.dim()) {
        throw Error(ErrorCode::bad_request, "vector dimension " + std::to_string(x.dim) +
                                                " does not match model dimension " + std::to_string(m.dim()));
    }
    return x.dot(m.weights) + m.bias;
}

inline ProbPair predict_proba(const Model& m, const SparseVector& x) {
    const double z = decision_value(m, x);
    const double p = m.degenerate ? m.constant_p_yes : logistic(z);
    return {p, 1.0 - p};
}

/// The lightweight model embeds a document as its own TF-IDF vector.
inline const SparseVector& embedding(const Model&, const SparseVector& x) { return x; }

inline nlohmann::json to_json(const Model& m) {
    return {{"weights", m.weights},
            {"bias", m.bias},
            {"version", m.version},
            {"degenerate", m.degenerate},
            {"constant_p_yes", m.constant_p_yes},
            {"l2", m.config.l2},
            {"max_epochs", m.config.max_epochs},
            {"class_weighting", m.config.class_weighting},
            {"seed", m.config.seed}};
}

inline Model model_from_json(const nlohmann::json& j) {
    Model m;
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.version = j.at("version").get<int>();
    m.degenerate = j.at("degenerate").get<bool>();
    m.constant_p_yes = j.at("constant_p_yes").get<double>();
    m.config.l2 = j.at("l2").get<double>();
    m.config.max_epochs = j.at("max_epochs").get<int>();
    m.config.class_weighting = j.at("class_weighting").get<bool>();
    m.config.seed = j.at("seed").get<std::uint64_t>();
    return m;
}

} // namespace cal
