#pragma once

#include "corpus.hpp"
#include "error.hpp"
#include "random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace cal {

struct BinaryMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    /// no predicted positives; precision reported as 0
    bool precision_undefined = false;
    /// no true positives; recall reported as 0
    bool recall_undefined = false;
};

/// Positive class is yes.
inline BinaryMetrics binary_metrics(std::span<const Label> predicted, std::span<const Label> truth) {
    if (predicted.size() != truth.size()) {
        throw Error(ErrorCode::bad_request, "predicted and truth lengths differ");
    }
    if (truth.empty()) {
        throw Error(ErrorCode::bad_request, "binary metrics need at least one point");
    }
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool p = predicted[i] == Label::yes;
        const bool t = truth[i] == Label::yes;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
        tn += !p && !t;
    }
    BinaryMetrics m;
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(truth.size());
    m.precision_undefined = tp + fp == 0;
    m.recall_undefined = tp + fn == 0;
    m.precision = m.precision_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall = m.recall_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    return m;
}

struct AucResult {
    double value = 0.5;
    bool degenerate = false;
};

/// Mann-Whitney AUC: P(score_pos > score_neg) with ties counted one half.
/// Sort-based, O(n log n); a class with no members yields 0.5 flagged
/// degenerate.
inline AucResult auc_roc(std::span<const double> scores, std::span<const Label> truth) {
    if (scores.size() != truth.size()) {
        throw Error(ErrorCode::bad_request, "scores and truth lengths differ");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double n_pos = 0.0, n_neg = 0.0;
    for (Label l : truth) {
        (l == Label::yes ? n_pos : n_neg) += 1.0;
    }
    if (n_pos == 0.0 || n_neg == 0.0) {
        return {0.5, true};
    }
    // count of (pos, neg) pairs with pos strictly above neg, plus half the ties,
    // accumulated as integers-in-doubles (exact below 2^53)
    double negatives_below = 0.0;
    double twice_wins = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        double pos_in_group = 0.0, neg_in_group = 0.0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (truth[order[j]] == Label::yes ? pos_in_group : neg_in_group) += 1.0;
            ++j;
        }
        twice_wins += pos_in_group * (2.0 * negatives_below + neg_in_group);
        negatives_below += neg_in_group;
        i = j;
    }
    return {twice_wins / (2.0 * n_pos * n_neg), false};
}

struct Estimate {
    double mean = 0.0;
    double half_width = 0.0;

    bool operator==(const Estimate&) const = default;
};

/// Mean plus or minus one population standard deviation of resampled values.
/// A single value carries the maximal half width 0.5.
inline Estimate uncertainty(std::span<const double> values) {
    if (values.empty()) {
        return {0.5, 0.5};
    }
    if (values.size() == 1) {
        return {values[0], 0.5};
    }
    const double n = static_cast<double>(values.size());
    // shifted by the first value so a constant sample has exactly zero spread
    const double shift = values[0];
    double sum = 0.0;
    for (double v : values) {
        sum += v - shift;
    }
    const double offset = sum / n;
    double var = 0.0;
    for (double v : values) {
        var += (v - shift - offset) * (v - shift - offset);
    }
    return {shift + offset, std::min(0.5, std::sqrt(var / n))};
}

struct MetricReport {
    Estimate accuracy;
    Estimate precision;
    Estimate recall;
    Estimate auc_roc;
    std::size_t yes_count = 0;
    std::size_t no_count = 0;
    bool degenerate_auc = false;
    std::size_t evaluated = 0;
};

inline constexpr std::size_t default_resamples = 200;

/// Point predictions threshold p_yes at 0.5; each metric is summarized over
/// `resamples` seeded bootstrap resamples of the evaluation set. AUC ignores
/// resamples that lost a class; if the full set lacks a class the AUC is the
/// degenerate (0.5, 0.5).
inline MetricReport evaluate_report(std::span<const double> p_yes, std::span<const Label> truth,
                                    std::size_t resamples = default_resamples, std::uint64_t seed = 0) {
    if (p_yes.size() != truth.size()) {
        throw Error(ErrorCode::bad_request, "score and truth lengths differ");
    }
    MetricReport r;
    r.evaluated = truth.size();
    for (Label l : truth) {
        (l == Label::yes ? r.yes_count : r.no_count)++;
    }
    if (truth.empty()) {
        r.accuracy = r.precision = r.recall = Estimate{0.0, 0.5};
        r.auc_roc = {0.5, 0.5};
        r.degenerate_auc = true;
        return r;
    }
    std::vector<Label> predicted(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        predicted[i] = p_yes[i] >= 0.5 ? Label::yes : Label::no;
    }
    r.degenerate_auc = auc_roc(p_yes, truth).degenerate;

    std::vector<double> acc, prec, rec, auc;
    Rng rng(derive_seed(seed, {0xB0075742}));
    std::vector<double> s(truth.size());
    std::vector<Label> t(truth.size()), p(truth.size());
    for (std::size_t b = 0; b < resamples; ++b) {
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const auto k = static_cast<std::size_t>(uniform_index(rng, truth.size()));
            s[i] = p_yes[k];
            t[i] = truth[k];
            p[i] = predicted[k];
        }
        const auto m = binary_metrics(p, t);
        acc.push_back(m.accuracy);
        prec.push_back(m.precision);
        rec.push_back(m.recall);
        if (!r.degenerate_auc) {
            const auto a = auc_roc(s, t);
            if (!a.degenerate) {
                auc.push_back(a.value);
            }
        }
    }
    if (resamples == 0) {
        const auto m = binary_metrics(predicted, truth);
        acc = {m.accuracy};
        prec = {m.precision};
        rec = {m.recall};
        if (!r.degenerate_auc) {
            auc = {auc_roc(p_yes, truth).value};
        }
    }
    r.accuracy = uncertainty(acc);
    r.precision = uncertainty(prec);
    r.recall = uncertainty(rec);
    r.auc_roc = r.degenerate_auc ? Estimate{0.5, 0.5} : uncertainty(auc);
    return r;
}

inline nlohmann::json to_json(const Estimate& e) { return {{"mean", e.mean}, {"half_width", e.half_width}}; }

inline nlohmann::json to_json(const MetricReport& r) {
    return {{"accuracy", to_json(r.accuracy)}, {"precision", to_json(r.precision)},
            {"recall", to_json(r.recall)},     {"auc_roc", to_json(r.auc_roc)},
            {"yes_count", r.yes_count},        {"no_count", r.no_count},
            {"degenerate_auc", r.degenerate_auc}, {"evaluated", r.evaluated}};
}

/// One completed active-learning cycle.
struct CycleMetrics {
    std::size_t cycle_index = 0;
    std::size_t labels_used = 0;
    std::size_t train_size = 0;
    std::size_t validation_size = 0;
    int model_version = 0;
    bool degenerate_model = false;
    double auc = 0.5;
    bool degenerate_auc = true;
    std::size_t yes_count = 0;
    std::size_t no_count = 0;
    double threshold_yes = 0.0;
    double threshold_no = 0.0;

    bool operator==(const CycleMetrics&) const = default;
};

struct ConvergencePoint {
    std::size_t cycle_index = 0;
    std::size_t labels_used = 0;
    double auc = 0.5;
};

inline std::vector<ConvergencePoint> convergence_series(std::span<const CycleMetrics> history) {
    std::vector<ConvergencePoint> out;
    out.reserve(history.size());
    for (const auto& h : history) {
        out.push_back({h.cycle_index, h.labels_used, h.auc});
    }
    return out;
}

inline std::string convergence_csv(std::span<const ConvergencePoint> series) {
    std::string out = "cycle,labels,auc\n";
    for (const auto& p : series) {
        nlohmann::json auc = p.auc; // shortest round-trip formatting
        out += std::to_string(p.cycle_index) + "," + std::to_string(p.labels_used) + "," + auc.dump() + "\n";
    }
    return out;
}

inline nlohmann::json to_json(const ConvergencePoint& p) {
    return {{"cycle", p.cycle_index}, {"labels", p.labels_used}, {"auc", p.auc}};
}

} // namespace cal
