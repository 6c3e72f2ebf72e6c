#pragma once

// Oracle-driven experiments: the engine asks for labels and ground truth
// answers, standing in for the human specialist.

#include "config.hpp"
#include "corpus.hpp"
#include "engine.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <memory>
#include <numeric>
#include <set>
#include <span>
#include <unordered_set>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cal {

struct SyntheticSpec {
    std::size_t n_docs = 5000;
    double prevalence = 0.25;
    /// probability that a token comes from the document's class topic rather
    /// than the shared background
    double signal = 0.2;
    /// share of topic tokens drawn from words common to both classes
    double overlap = 0.5;
    /// vocabulary size of each topic word group (shared, yes-only, no-only)
    std::size_t topic_words = 20;
    std::size_t background_words = 1500;
    std::size_t min_length = 15;
    std::size_t max_length = 45;
    std::uint64_t seed = 0;
    std::string task = "target";
};

namespace detail {

/// Draw from a Zipf(1) law over `n` ranks via a precomputed CDF.
class Zipf {
public:
    explicit Zipf(std::size_t n) : cdf_(n) {
        double total = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            total += 1.0 / static_cast<double>(r + 1);
            cdf_[r] = total;
        }
        for (auto& c : cdf_) c /= total;
    }

    std::size_t draw(Rng& rng) const {
        const double u = uniform01(rng);
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        return std::min(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
    }

private:
    std::vector<double> cdf_;
};

} // namespace detail

/// Bag-of-words documents from two overlapping topic distributions; exactly
/// round(prevalence * n_docs) documents are positive.
inline Dataset make_synthetic_corpus(const SyntheticSpec& spec) {
    if (!(spec.prevalence > 0.0 && spec.prevalence < 1.0)) {
        throw Error(ErrorCode::bad_request, "prevalence must lie in (0, 1)");
    }
    if (spec.n_docs == 0 || spec.topic_words == 0 || spec.background_words == 0 || spec.min_length < 1 ||
        spec.max_length < spec.min_length) {
        throw Error(ErrorCode::bad_request, "invalid synthetic corpus shape");
    }
    Rng rng(derive_seed(spec.seed, {0xC0A9}));
    auto topic_word = [&](Label cls, std::size_t r, bool shared) {
        if (shared) return "sh" + std::to_string(r);
        return std::string(cls == Label::yes ? "px" : "nx") + std::to_string(r);
    };
    const detail::Zipf background(spec.background_words);
    const detail::Zipf topic(spec.topic_words);

    const auto n_pos = static_cast<std::size_t>(std::lround(spec.prevalence * static_cast<double>(spec.n_docs)));
    std::vector<Label> labels(spec.n_docs, Label::no);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_pos), Label::yes);
    shuffle(std::span<Label>(labels), rng);

    Dataset ds;
    ds.id = "synthetic";
    ds.source_uri = "synthetic:" + std::to_string(spec.seed);
    const int width = static_cast<int>(std::to_string(spec.n_docs).size());
    for (std::size_t i = 0; i < spec.n_docs; ++i) {
        const auto len = spec.min_length + static_cast<std::size_t>(uniform_index(rng, spec.max_length - spec.min_length + 1));
        std::string text;
        for (std::size_t t = 0; t < len; ++t) {
            if (t) text.push_back(' ');
            if (uniform01(rng) < spec.signal) {
                const bool shared = uniform01(rng) < spec.overlap;
                text += topic_word(labels[i], topic.draw(rng), shared);
            } else {
                text += "bg" + std::to_string(background.draw(rng));
            }
        }
        std::ostringstream id;
        id << "syn-" << std::setw(width) << std::setfill('0') << i;
        ds.documents.push_back({id.str(), std::move(text), {{spec.task, labels[i]}}});
    }
    ds.reindex();
    return ds;
}

enum class SimBootstrap { random, keyword };

struct ExperimentConfig {
    std::string task = "target";
    std::size_t label_budget = 100;
    /// pre-labeled documents recorded before the first manual label
    std::size_t prelabeled = 0;
    bool prelabeled_counts_toward_budget = false;
    /// how pre-labeled positives are found: keyword matches when
    /// keyword_terms is set, otherwise truth positives as a perfect keyword
    /// search
    std::vector<std::string> keyword_terms;
    std::vector<std::uint64_t> seeds{1};
    bool baseline = false;
    std::size_t probe_size = 500;
    std::size_t resamples = default_resamples;
    EngineConfig engine;

    SyntheticSpec corpus;
    std::optional<std::string> corpus_path;
    IngestOptions ingest;

    std::size_t manual_budget() const {
        return prelabeled_counts_toward_budget ? label_budget - prelabeled : label_budget;
    }

    void validate() const {
        if (label_budget == 0) throw Error(ErrorCode::bad_request, "label_budget must be positive");
        if (prelabeled_counts_toward_budget && label_budget <= prelabeled) {
            throw Error(ErrorCode::bad_request, "label_budget must exceed prelabeled when pre-labels count");
        }
        if (seeds.empty()) throw Error(ErrorCode::bad_request, "at least one seed is required");
        engine.validate();
    }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
    return {{"task", c.task},
            {"label_budget", c.label_budget},
            {"prelabeled", c.prelabeled},
            {"prelabeled_counts_toward_budget", c.prelabeled_counts_toward_budget},
            {"keyword_terms", c.keyword_terms},
            {"seeds", c.seeds},
            {"baseline", c.baseline},
            {"probe_size", c.probe_size},
            {"resamples", c.resamples},
            {"engine", to_json(c.engine)},
            {"corpus",
             c.corpus_path ? nlohmann::json{{"path", *c.corpus_path}}
                           : nlohmann::json{{"n_docs", c.corpus.n_docs},
                                            {"prevalence", c.corpus.prevalence},
                                            {"signal", c.corpus.signal},
                                            {"overlap", c.corpus.overlap},
                                            {"seed", c.corpus.seed}}}};
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
        auto t = detail::trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

inline ExperimentConfig experiment_config_from(const KeyValues& kv) {
    using namespace detail;
    ExperimentConfig c;
    c.engine.background_training = false;
    c.engine.eval_scope = EvalScope::probe;
    std::optional<std::string> truth_column;
    for (const auto& [k, v] : kv) {
        if (k == "task") c.task = v;
        else if (k == "label_budget") c.label_budget = to_uint(k, v);
        else if (k == "prelabeled") c.prelabeled = to_uint(k, v);
        else if (k == "prelabeled_counts_toward_budget") c.prelabeled_counts_toward_budget = to_bool(k, v);
        else if (k == "keyword_terms") c.keyword_terms = split_list(v);
        else if (k == "seeds") {
            c.seeds.clear();
            for (const auto& s : split_list(v)) c.seeds.push_back(to_uint(k, s));
        } else if (k == "baseline") c.baseline = to_bool(k, v);
        else if (k == "probe_size") c.probe_size = to_uint(k, v);
        else if (k == "resamples") c.resamples = to_uint(k, v);
        else if (k == "n_docs") c.corpus.n_docs = to_uint(k, v);
        else if (k == "prevalence") c.corpus.prevalence = to_double(k, v);
        else if (k == "signal") c.corpus.signal = to_double(k, v);
        else if (k == "overlap") c.corpus.overlap = to_double(k, v);
        else if (k == "corpus_seed") c.corpus.seed = to_uint(k, v);
        else if (k == "corpus_path") c.corpus_path = v;
        else if (k == "corpus_format") c.ingest.format = parse_format(v);
        else if (k == "text_column") c.ingest.text_column = v;
        else if (k == "id_column") c.ingest.id_column = v;
        else if (k == "truth_column") truth_column = v;
        else if (!apply_engine_key(c.engine, k, v)) {
            throw Error(ErrorCode::bad_request, "unknown experiment config key '" + k + "'");
        }
    }
    c.corpus.task = c.task;
    if (c.corpus_path) c.ingest.truth_columns[c.task] = truth_column.value_or(c.task);
    c.validate();
    return c;
}

struct SeedResult {
    std::uint64_t seed = 0;
    MetricReport report;
    std::size_t positives_found = 0;
    std::size_t oracle_labels = 0;
    std::size_t prelabeled = 0;
    std::size_t prelabeled_positives = 0;
    std::size_t cycles = 0;
    std::vector<ConvergencePoint> convergence;
};

struct ExperimentReport {
    std::string method; // "active" or "random"
    std::vector<SeedResult> per_seed;
    MetricReport aggregate;
    double positives_found_median = 0.0;
    nlohmann::json config;
};

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline Estimate aggregate(const std::vector<SeedResult>& runs, Estimate MetricReport::*field) {
    if (runs.size() == 1) return runs.front().report.*field;
    std::vector<double> means;
    for (const auto& r : runs) means.push_back((r.report.*field).mean);
    return uncertainty(means);
}

inline void finish(ExperimentReport& rep) {
    std::vector<double> positives;
    for (const auto& r : rep.per_seed) positives.push_back(static_cast<double>(r.positives_found));
    rep.positives_found_median = median(positives);
    auto& a = rep.aggregate;
    a.accuracy = aggregate(rep.per_seed, &MetricReport::accuracy);
    a.precision = aggregate(rep.per_seed, &MetricReport::precision);
    a.recall = aggregate(rep.per_seed, &MetricReport::recall);
    a.auc_roc = aggregate(rep.per_seed, &MetricReport::auc_roc);
    a.degenerate_auc = std::all_of(rep.per_seed.begin(), rep.per_seed.end(),
                                   [](const SeedResult& r) { return r.report.degenerate_auc; });
    std::vector<double> yes, no;
    for (const auto& r : rep.per_seed) {
        yes.push_back(static_cast<double>(r.report.yes_count));
        no.push_back(static_cast<double>(r.report.no_count));
        a.evaluated = r.report.evaluated;
    }
    a.yes_count = static_cast<std::size_t>(std::lround(median(yes)));
    a.no_count = static_cast<std::size_t>(std::lround(median(no)));
}

inline Label truth_of(const Document& d, const std::string& task) {
    auto it = d.truth.find(task);
    if (it == d.truth.end()) {
        throw Error(ErrorCode::precondition, "document '" + d.id + "' has no ground truth for task '" + task + "'");
    }
    return it->second;
}

/// Seeded probe sample shared by the active and random runs of one seed.
inline std::vector<std::pair<std::string, Label>> probe_sample(const Dataset& ds, const ExperimentConfig& cfg,
                                                               std::uint64_t seed) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {0x9B0BE}));
    shuffle(std::span<std::size_t>(idx), rng);
    const auto n = std::min(cfg.probe_size, ds.size() / 2);
    std::vector<std::pair<std::string, Label>> probe;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& d = ds.documents[idx[i]];
        probe.emplace_back(d.id, truth_of(d, cfg.task));
    }
    return probe;
}

inline Dataset load_corpus(const ExperimentConfig& cfg) {
    if (cfg.corpus_path) return ingest_dataset(*cfg.corpus_path, cfg.ingest, "experiment");
    auto spec = cfg.corpus;
    spec.task = cfg.task;
    return make_synthetic_corpus(spec);
}

} // namespace detail

/// Pre-labeled bootstrap: half keyword-found positives (truth positives when
/// no terms are configured), the rest from a random list; all labeled from
/// ground truth.
inline std::vector<Annotation> choose_prelabeled(const Dataset& ds, const ExperimentConfig& cfg,
                                                 const std::set<std::string>& excluded, std::uint64_t seed) {
    std::vector<Annotation> out;
    if (cfg.prelabeled == 0) return out;
    Rng rng(derive_seed(seed, {0x9E1A}));
    std::vector<std::string> hits, others;
    std::unordered_set<std::string> wanted;
    for (const auto& t : cfg.keyword_terms) {
        for (auto& tok : tokenize(t)) wanted.insert(tok);
    }
    for (const auto& d : ds.documents) {
        if (excluded.count(d.id)) continue;
        bool hit = false;
        if (wanted.empty()) {
            hit = detail::truth_of(d, cfg.task) == Label::yes;
        } else {
            for (const auto& tok : tokenize(d.text)) {
                if (wanted.count(tok)) {
                    hit = true;
                    break;
                }
            }
        }
        (hit ? hits : others).push_back(d.id);
    }
    shuffle(std::span<std::string>(hits), rng);
    shuffle(std::span<std::string>(others), rng);
    const std::size_t n_hits = std::min(hits.size(), (cfg.prelabeled + 1) / 2);
    std::vector<std::string> chosen(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n_hits));
    for (std::size_t i = 0; chosen.size() < cfg.prelabeled && i < others.size(); ++i) chosen.push_back(others[i]);
    for (const auto& id : chosen) {
        out.push_back({id, cfg.task, detail::truth_of(*ds.find(id), cfg.task), Origin::pre_labeled, "keyword-search", 0});
    }
    return out;
}

inline SeedResult run_active_seed(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed) {
    auto corpus = std::make_shared<Corpus>();
    auto ds = corpus->add_dataset(data);
    corpus->create_task(cfg.task, ds->id);
    auto ecfg = cfg.engine;
    ecfg.seed = seed;
    ecfg.background_training = false;
    Engine engine(corpus, cfg.task, ecfg);
    const auto probe = detail::probe_sample(*ds, cfg, seed);
    engine.set_probe(probe);

    SeedResult res;
    res.seed = seed;
    std::set<std::string> probe_ids;
    for (const auto& [id, _] : probe) probe_ids.insert(id);
    auto pre = choose_prelabeled(*ds, cfg, probe_ids, seed);
    res.prelabeled = pre.size();
    for (const auto& a : pre) res.prelabeled_positives += a.label == Label::yes;
    if (pre.empty()) {
        engine.bootstrap(BootstrapRandom{});
    } else {
        engine.bootstrap(BootstrapPreLabeled{std::move(pre)});
    }

    const auto budget = cfg.manual_budget();
    while (res.oracle_labels < budget) {
        auto next = engine.next_to_label();
        if (next.status == NextDoc::Status::complete) break;
        const auto label = detail::truth_of(*ds->find(next.doc_id), cfg.task);
        engine.submit_label(next.doc_id, label, "oracle", Origin::oracle);
        ++res.oracle_labels;
        res.positives_found += label == Label::yes;
    }
    if (engine.status().labels_total >= ecfg.min_labels_before_training) {
        engine.run_cycle(); // final model sees every label
    }
    res.report = engine.report(cfg.resamples);
    if (auto m = engine.model(); m && m->degenerate) {
        res.report.auc_roc = {0.5, 0.5};
        res.report.degenerate_auc = true;
    }
    auto hist = engine.history();
    res.cycles = hist.size();
    res.convergence = convergence_series(hist);
    return res;
}

inline SeedResult run_random_seed(const ExperimentConfig& cfg, const Dataset& ds, std::uint64_t seed) {
    const auto probe = detail::probe_sample(ds, cfg, seed);
    std::set<std::string> probe_ids;
    for (const auto& [id, _] : probe) probe_ids.insert(id);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!probe_ids.count(ds.documents[i].id)) candidates.push_back(i);
    }
    Rng rng(derive_seed(seed, {0x2A2D}));
    shuffle(std::span<std::size_t>(candidates), rng);
    candidates.resize(std::min(candidates.size(), cfg.label_budget));

    auto fs = FeatureStore::build(ds, cfg.engine.vocab);
    std::vector<Example> examples;
    SeedResult res;
    res.seed = seed;
    for (auto i : candidates) {
        const auto label = detail::truth_of(ds.documents[i], cfg.task);
        examples.push_back({fs->vectors[i], label});
        res.positives_found += label == Label::yes;
    }
    res.oracle_labels = examples.size();
    auto tcfg = cfg.engine.train;
    tcfg.seed = seed;
    const auto model = train(examples, fs->vocab.size(), tcfg);
    std::vector<double> scores;
    std::vector<Label> truth;
    for (const auto& [id, label] : probe) {
        scores.push_back(predict_proba(model, fs->vectors[*ds.position(id)]).yes);
        truth.push_back(label);
    }
    res.report = evaluate_report(scores, truth, cfg.resamples, derive_seed(seed, {5}));
    res.report.yes_count = res.positives_found;
    res.report.no_count = examples.size() - res.positives_found;
    if (model.degenerate) {
        res.report.auc_roc = {0.5, 0.5};
        res.report.degenerate_auc = true;
    }
    res.cycles = 1;
    return res;
}

/// Active learning per seed until the manual budget is consumed.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const Dataset& ds) {
    cfg.validate();
    ExperimentReport rep;
    rep.method = "active";
    rep.config = to_json(cfg);
    for (auto seed : cfg.seeds) rep.per_seed.push_back(run_active_seed(cfg, ds, seed));
    detail::finish(rep);
    return rep;
}

/// Uniform random sample of label_budget documents, one training run.
inline ExperimentReport run_random_baseline(const ExperimentConfig& cfg, const Dataset& ds) {
    cfg.validate();
    ExperimentReport rep;
    rep.method = "random";
    rep.config = to_json(cfg);
    for (auto seed : cfg.seeds) rep.per_seed.push_back(run_random_seed(cfg, ds, seed));
    detail::finish(rep);
    return rep;
}

inline nlohmann::json to_json(const ExperimentReport& rep) {
    auto seeds = nlohmann::json::array();
    for (const auto& r : rep.per_seed) {
        auto conv = nlohmann::json::array();
        for (const auto& p : r.convergence) conv.push_back(to_json(p));
        seeds.push_back({{"seed", r.seed},
                         {"metrics", to_json(r.report)},
                         {"positives_found", r.positives_found},
                         {"oracle_labels", r.oracle_labels},
                         {"prelabeled", r.prelabeled},
                         {"prelabeled_positives", r.prelabeled_positives},
                         {"cycles", r.cycles},
                         {"convergence", conv}});
    }
    return {{"method", rep.method},
            {"config", rep.config},
            {"per_seed", seeds},
            {"aggregate", to_json(rep.aggregate)},
            {"positives_found_median", rep.positives_found_median}};
}

/// Plain-text table: accuracy, precision, recall, AUC-ROC, yes/no counts.
inline std::string to_table(const ExperimentReport& rep) {
    std::ostringstream out;
    auto est = [](const Estimate& e) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(2) << e.mean << " +- " << e.half_width;
        return s.str();
    };
    out << std::left << std::setw(12) << "Run" << std::setw(16) << "Accuracy" << std::setw(16) << "Precision"
        << std::setw(16) << "Recall" << std::setw(16) << "AUC-ROC" << std::setw(10) << "Yes/No"
        << "Positives found\n";
    auto row = [&](const std::string& name, const MetricReport& m, const std::string& positives) {
        out << std::left << std::setw(12) << name << std::setw(16) << est(m.accuracy) << std::setw(16)
            << est(m.precision) << std::setw(16) << est(m.recall) << std::setw(16) << est(m.auc_roc) << std::setw(10)
            << (std::to_string(m.yes_count) + "/" + std::to_string(m.no_count)) << positives << '\n';
    };
    for (const auto& r : rep.per_seed) {
        row(rep.method + "#" + std::to_string(r.seed), r.report, std::to_string(r.positives_found));
    }
    std::ostringstream med;
    med << rep.positives_found_median << " (median)";
    row(rep.method + " all", rep.aggregate, med.str());
    return out.str();
}

/// Runs the configured experiment (and the random baseline when requested)
/// and returns the combined JSON document.
inline nlohmann::json simulate(const ExperimentConfig& cfg) {
    const auto ds = detail::load_corpus(cfg);
    nlohmann::json out;
    out["active"] = to_json(run_experiment(cfg, ds));
    if (cfg.baseline) out["baseline"] = to_json(run_random_baseline(cfg, ds));
    return out;
}

} // namespace cal
