#pragma once

// Label-conditional split conformal prediction over the binary label space.

#include "classifier.hpp"
#include "corpus.hpp"
#include "error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cal {

inline constexpr double infinity = std::numeric_limits<double>::infinity();

/// s(x, y) = 1 - p(y | x)
inline double conformity_score(const ProbPair& probs, Label y) { return 1.0 - probs.of(y); }

struct CalibrationSet {
    /// scores s(X_i, Y_i) of validation points, split by their true label
    std::array<std::vector<double>, 2> scores;

    void add(const ProbPair& probs, Label truth) { scores[index_of(truth)].push_back(conformity_score(probs, truth)); }
    std::size_t count(Label y) const { return scores[index_of(y)].size(); }
};

struct Thresholds {
    double alpha = 0.1;
    std::array<double, 2> t{infinity, infinity};

    double of(Label y) const { return t[index_of(y)]; }
};

/// Rank of the conformal quantile among n calibration scores:
/// ceil((n + 1)(1 - alpha)). A rank above n selects the appended +inf.
inline std::size_t conformal_rank(std::size_t n, double alpha) {
    const double target = static_cast<double>(n + 1) * (1.0 - alpha);
    // 1e-9 absorbs representation error such as 10 * (1 - 0.1) landing a hair above 9
    return static_cast<std::size_t>(std::ceil(target - 1e-9));
}

/// Empirical (1 - alpha) quantile of `scores` augmented with +inf.
inline double conformal_quantile(std::vector<double> scores, double alpha) {
    const std::size_t k = conformal_rank(scores.size(), alpha);
    if (k == 0) {
        // only reachable for alpha ~ 1; every set then contains nothing
        return -infinity;
    }
    if (k > scores.size()) {
        return infinity;
    }
    std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k - 1), scores.end());
    return scores[k - 1];
}

inline Thresholds calibrate(const CalibrationSet& cal, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw Error(ErrorCode::bad_request, "alpha must lie in (0, 1)");
    }
    Thresholds th;
    th.alpha = alpha;
    for (Label y : all_labels) {
        th.t[index_of(y)] = conformal_quantile(cal.scores[index_of(y)], alpha);
    }
    return th;
}

/// Subset of {no, yes} as a bit mask.
struct LabelSet {
    std::uint8_t bits = 0;

    static LabelSet of(std::initializer_list<Label> labels) {
        LabelSet s;
        for (Label l : labels) {
            s.insert(l);
        }
        return s;
    }

    void insert(Label l) { bits |= static_cast<std::uint8_t>(1u << index_of(l)); }
    bool contains(Label l) const { return (bits >> index_of(l)) & 1u; }
    std::size_t size() const { return static_cast<std::size_t>(contains(Label::no)) + contains(Label::yes); }
    bool empty() const { return bits == 0; }
    bool subset_of(LabelSet other) const { return (bits & ~other.bits) == 0; }

    bool operator==(const LabelSet&) const = default;
};

inline nlohmann::json to_json(LabelSet s) {
    auto out = nlohmann::json::array();
    for (Label l : all_labels) {
        if (s.contains(l)) {
            out.push_back(to_string(l));
        }
    }
    return out;
}

/// C(x) = { y : s(x, y) <= t_y }
inline LabelSet prediction_set(const ProbPair& probs, const Thresholds& th) {
    LabelSet s;
    for (Label y : all_labels) {
        if (conformity_score(probs, y) <= th.of(y)) {
            s.insert(y);
        }
    }
    return s;
}

/// Mean conformity score over the predicted set; an empty set scores 1.0.
inline double uncertainty_score(const ProbPair& probs, LabelSet set) {
    if (set.empty()) {
        return 1.0;
    }
    double sum = 0.0;
    for (Label y : all_labels) {
        if (set.contains(y)) {
            sum += conformity_score(probs, y);
        }
    }
    return sum / static_cast<double>(set.size());
}

struct PredictionRecord {
    std::string doc_id;
    ProbPair probs;
    LabelSet set;
    double s_x = 1.0;

    bool operator==(const PredictionRecord& o) const {
        return doc_id == o.doc_id && probs.yes == o.probs.yes && probs.no == o.probs.no && set == o.set &&
               s_x == o.s_x;
    }
};

inline PredictionRecord make_record(std::string doc_id, const ProbPair& probs, const Thresholds& th) {
    PredictionRecord r{std::move(doc_id), probs, prediction_set(probs, th), 0.0};
    r.s_x = uncertainty_score(probs, r.set);
    return r;
}

struct LabeledPrediction {
    LabelSet set;
    Label truth;
};

/// Fraction of points with truth y whose set contains y; classes with no
/// points are absent.
inline std::array<std::optional<double>, 2> empirical_coverage(std::span<const LabeledPrediction> points) {
    std::array<std::size_t, 2> hits{0, 0};
    std::array<std::size_t, 2> totals{0, 0};
    for (const auto& p : points) {
        ++totals[index_of(p.truth)];
        hits[index_of(p.truth)] += p.set.contains(p.truth);
    }
    std::array<std::optional<double>, 2> out;
    for (std::size_t c = 0; c < 2; ++c) {
        if (totals[c] > 0) {
            out[c] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
        }
    }
    return out;
}

inline nlohmann::json threshold_json(double t) {
    if (std::isinf(t)) {
        return t > 0 ? "inf" : "-inf";
    }
    return t;
}

inline double threshold_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        return j.get<std::string>() == "-inf" ? -infinity : infinity;
    }
    return j.get<double>();
}

inline nlohmann::json to_json(const Thresholds& th) {
    return {{"alpha", th.alpha}, {"no", threshold_json(th.t[0])}, {"yes", threshold_json(th.t[1])}};
}

inline Thresholds thresholds_from_json(const nlohmann::json& j) {
    Thresholds th;
    th.alpha = j.at("alpha").get<double>();
    th.t[0] = threshold_from_json(j.at("no"));
    th.t[1] = threshold_from_json(j.at("yes"));
    return th;
}

inline nlohmann::json to_json(const PredictionRecord& r) {
    return {{"doc_id", r.doc_id}, {"p_yes", r.probs.yes}, {"p_no", r.probs.no}, {"set", to_json(r.set)}, {"s_x", r.s_x}};
}

inline PredictionRecord record_from_json(const nlohmann::json& j) {
    PredictionRecord r;
    r.doc_id = j.at("doc_id").get<std::string>();
    r.probs = {j.at("p_yes").get<double>(), j.at("p_no").get<double>()};
    for (const auto& s : j.at("set")) {
        r.set.insert(*parse_label(s.get<std::string>()));
    }
    r.s_x = j.at("s_x").get<double>();
    return r;
}

} // namespace cal
