#include <cal/metrics.hpp>
#include <cal/random.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace cal;

namespace {

constexpr Label Y = Label::yes;
constexpr Label N = Label::no;

double pairwise_auc(const std::vector<double>& s, const std::vector<Label>& t) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (t[i] != Y) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (t[j] != N) continue;
            pairs += 1;
            wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    }
    return wins / pairs;
}

} // namespace

TEST(BinaryMetrics, HandCountedExamples) {
    std::vector<Label> truth{Y, N, Y, N};
    auto perfect = binary_metrics(truth, truth);
    EXPECT_EQ(perfect.accuracy, 1.0);
    EXPECT_EQ(perfect.precision, 1.0);
    EXPECT_EQ(perfect.recall, 1.0);

    auto all_no = binary_metrics(std::vector<Label>{N, N, N, N}, truth);
    EXPECT_EQ(all_no.accuracy, 0.5);
    EXPECT_TRUE(all_no.precision_undefined);
    EXPECT_EQ(all_no.precision, 0.0);
    EXPECT_EQ(all_no.recall, 0.0);

    auto half = binary_metrics(std::vector<Label>{Y, Y, N, N}, truth);
    EXPECT_EQ(half.accuracy, 0.5);
    EXPECT_EQ(half.precision, 0.5);
    EXPECT_EQ(half.recall, 0.5);

    EXPECT_THROW(binary_metrics(std::vector<Label>{Y}, truth), Error);
}

TEST(BinaryMetrics, MatchesConfusionMatrixOracle) {
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + uniform_index(rng, 100);
        std::vector<Label> p(n), t(n);
        double tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = uniform01(rng) < 0.4 ? Y : N;
            t[i] = uniform01(rng) < 0.3 ? Y : N;
            if (p[i] == Y && t[i] == Y) ++tp;
            if (p[i] == Y && t[i] == N) ++fp;
            if (p[i] == N && t[i] == Y) ++fn;
            if (p[i] == N && t[i] == N) ++tn;
        }
        auto m = binary_metrics(p, t);
        EXPECT_DOUBLE_EQ(m.accuracy, (tp + tn) / n);
        EXPECT_DOUBLE_EQ(m.precision, tp + fp > 0 ? tp / (tp + fp) : 0.0);
        EXPECT_DOUBLE_EQ(m.recall, tp + fn > 0 ? tp / (tp + fn) : 0.0);
        EXPECT_EQ(m.precision_undefined, tp + fp == 0);
        EXPECT_EQ(m.recall_undefined, tp + fn == 0);
    }
}

TEST(Auc, Examples) {
    std::vector<double> s{0.9, 0.8, 0.3, 0.2};
    EXPECT_EQ(auc_roc(s, std::vector<Label>{Y, Y, N, N}).value, 1.0);
    EXPECT_EQ(auc_roc(s, std::vector<Label>{Y, N, Y, N}).value, 0.75);
    auto d = auc_roc(s, std::vector<Label>{N, N, N, N});
    EXPECT_TRUE(d.degenerate);
    EXPECT_EQ(d.value, 0.5);
}

TEST(Auc, MatchesPairwiseEnumerationWithTies) {
    Rng rng(99);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + uniform_index(rng, 199);
        std::vector<double> s(n);
        std::vector<Label> t(n);
        const bool coarse = trial % 3 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = coarse ? static_cast<double>(uniform_index(rng, 5)) : uniform01(rng);
            t[i] = uniform01(rng) < 0.5 ? Y : N;
        }
        t[0] = Y;
        t[1] = N;
        EXPECT_NEAR(auc_roc(s, t).value, pairwise_auc(s, t), 1e-12);
    }
}

TEST(Auc, MonotoneTransformInvarianceAndFlipComplement) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 10 + uniform_index(rng, 50);
        std::vector<double> s(n), g(n);
        std::vector<Label> t(n), f(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = uniform01(rng);
            g[i] = std::exp(3 * s[i]) - 7;
            t[i] = i % 2 ? Y : N;
            f[i] = t[i] == Y ? N : Y;
        }
        const double a = auc_roc(s, t).value;
        EXPECT_EQ(a, auc_roc(g, t).value);
        EXPECT_NEAR(a + auc_roc(s, f).value, 1.0, 1e-12);
    }
}

TEST(Uncertainty, Examples) {
    EXPECT_EQ(uncertainty(std::vector<double>{0.7, 0.7, 0.7}).half_width, 0.0);
    auto two = uncertainty(std::vector<double>{0.8, 1.0});
    EXPECT_NEAR(two.mean, 0.9, 1e-15);
    EXPECT_NEAR(two.half_width, 0.1, 1e-15);
    auto one = uncertainty(std::vector<double>{0.5});
    EXPECT_EQ(one.half_width, 0.5);
}

TEST(Report, DegenerateTruthGivesHalfPlusMinusHalf) {
    std::vector<double> p{0.2, 0.7, 0.9};
    std::vector<Label> t{N, N, N};
    auto r = evaluate_report(p, t, 200, 1);
    EXPECT_TRUE(r.degenerate_auc);
    EXPECT_EQ(r.auc_roc, (Estimate{0.5, 0.5}));
    EXPECT_EQ(r.no_count, 3u);
}

TEST(Report, BoundedSeededAndCentredOnTheFullSetValue) {
    Rng rng(6);
    std::vector<double> p(300);
    std::vector<Label> t(300);
    for (std::size_t i = 0; i < p.size(); ++i) {
        t[i] = uniform01(rng) < 0.3 ? Y : N;
        p[i] = std::clamp((t[i] == Y ? 0.65 : 0.35) + 0.25 * standard_normal(rng), 0.0, 1.0);
    }
    auto a = evaluate_report(p, t, 200, 3);
    auto b = evaluate_report(p, t, 200, 3);
    EXPECT_EQ(a.auc_roc, b.auc_roc);
    for (const auto& e : {a.accuracy, a.precision, a.recall, a.auc_roc}) {
        EXPECT_GE(e.mean, 0.0);
        EXPECT_LE(e.mean, 1.0);
        EXPECT_GE(e.half_width, 0.0);
        EXPECT_LE(e.half_width, 0.5);
    }
    EXPECT_NEAR(a.auc_roc.mean, auc_roc(p, t).value, 0.02);
    EXPECT_GT(a.auc_roc.half_width, 0.0);
}

TEST(Convergence, SeriesAndCsv) {
    std::vector<CycleMetrics> h(3);
    for (std::size_t i = 0; i < 3; ++i) {
        h[i].cycle_index = i + 1;
        h[i].labels_used = 10 * (i + 1);
        h[i].auc = 0.6 + 0.1 * i;
    }
    auto series = convergence_series(h);
    ASSERT_EQ(series.size(), 3u);
    for (std::size_t i = 1; i < series.size(); ++i) EXPECT_GT(series[i].labels_used, series[i - 1].labels_used);
    auto csv = convergence_csv(series);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "cycle,labels,auc");
    EXPECT_TRUE(convergence_series({}).empty());
}
