// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <cal/cal.hpp>
#include <cal/service.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

using namespace cal;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double limit_seconds, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limit_seconds > 0 && secs >= limit_seconds) {
        o.pass = false;
        o.detail += "; runtime over " + std::to_string(static_cast<int>(limit_seconds)) + " s";
    }
    failures += !o.pass;
    std::printf("%s %d %s: %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Exact integer rank ceil((n+1)(1-alpha)) for alpha = num/den.
double sorted_threshold(std::vector<double> scores, std::uint64_t num, std::uint64_t den) {
    std::sort(scores.begin(), scores.end());
    const std::uint64_t n = scores.size();
    const std::uint64_t k = ((n + 1) * (den - num) + den - 1) / den;
    if (k > n) return infinity;
    return scores[k - 1];
}

// 1. Label-conditional coverage of a fixed classifier on exchangeable data.
Outcome coverage() {
    const std::size_t splits = 200, per_class = 100;
    const double alpha = 0.1;
    // fixed model: p_yes = logistic(1.5 * x), x ~ N(+1, 1) for yes and N(-1, 1) for no
    auto draw = [](Rng& rng, Label y) {
        const double x = (y == Label::yes ? 1.0 : -1.0) + standard_normal(rng);
        const double p = logistic(1.5 * x);
        return ProbPair{p, 1.0 - p};
    };
    std::array<double, 2> sum{0, 0};
    std::array<std::size_t, 2> below_floor{0, 0};
    const double floor = 0.9 - 3 * std::sqrt(0.09 / 100.0);
    for (std::size_t s = 0; s < splits; ++s) {
        Rng rng(derive_seed(20240, {s}));
        CalibrationSet cs;
        std::vector<LabeledPrediction> test;
        for (Label y : all_labels) {
            for (std::size_t i = 0; i < per_class; ++i) cs.add(draw(rng, y), y);
        }
        const auto th = calibrate(cs, alpha);
        for (Label y : all_labels) {
            for (std::size_t i = 0; i < per_class; ++i) test.push_back({prediction_set(draw(rng, y), th), y});
        }
        const auto cov = empirical_coverage(test);
        for (Label y : all_labels) {
            sum[index_of(y)] += *cov[index_of(y)];
            below_floor[index_of(y)] += *cov[index_of(y)] < floor;
        }
    }
    const double mean_no = sum[0] / splits, mean_yes = sum[1] / splits;
    const double aggregate = 0.5 * (mean_no + mean_yes);
    const bool pass = mean_no >= floor && mean_yes >= floor && aggregate >= 0.90;
    return {pass, "mean coverage yes=" + fmt(mean_yes) + " no=" + fmt(mean_no) + " (floor " + fmt(floor, 2) +
                      "), aggregate=" + fmt(aggregate) + " (need >= 0.90); single splits under the floor: yes " +
                      std::to_string(below_floor[1]) + "/200, no " + std::to_string(below_floor[0]) + "/200"};
}

// 2. calibrate against sort-and-index.
Outcome quantile_oracle() {
    Rng rng(2);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::uint64_t num = 1 + uniform_index(rng, 999);
        const double alpha = static_cast<double>(num) / 1000.0;
        CalibrationSet cs;
        for (Label y : all_labels) {
            const std::size_t n = uniform_index(rng, 200);
            for (std::size_t i = 0; i < n; ++i) {
                cs.scores[index_of(y)].push_back(uniform01(rng) < 0.1 ? 0.25 : uniform01(rng));
            }
        }
        const auto th = calibrate(cs, alpha);
        for (Label y : all_labels) {
            mismatches += th.of(y) != sorted_threshold(cs.scores[index_of(y)], num, 1000);
        }
    }
    return {mismatches == 0, std::to_string(mismatches) + " mismatches over 1000 instances"};
}

// 3. auc_roc against pairwise enumeration.
Outcome auc_oracle() {
    Rng rng(3);
    double worst = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + uniform_index(rng, 199);
        std::vector<double> s(n);
        std::vector<Label> t(n);
        const bool ties = trial % 2 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = ties ? static_cast<double>(uniform_index(rng, 6)) / 5.0 : uniform01(rng);
            t[i] = uniform01(rng) < 0.4 ? Label::yes : Label::no;
        }
        t[0] = Label::yes;
        t[1] = Label::no;
        double wins = 0, pairs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (t[i] != Label::yes) continue;
            for (std::size_t j = 0; j < n; ++j) {
                if (t[j] != Label::no) continue;
                pairs += 1;
                wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
        }
        worst = std::max(worst, std::abs(auc_roc(s, t).value - wins / pairs));
    }
    return {worst <= 1e-12, "max abs difference " + sci(worst) + " over 500 instances"};
}

// 4. Analytic gradient against central differences.
Outcome gradient_check() {
    Rng rng(4);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t dim = 2 + uniform_index(rng, 6);
        const std::size_t n = 4 + uniform_index(rng, 12);
        std::vector<Example> ex;
        for (std::size_t i = 0; i < n; ++i) {
            SparseVector x;
            x.dim = dim;
            for (std::uint32_t j = 0; j < dim; ++j) {
                if (uniform01(rng) < 0.7) x.entries.emplace_back(j, standard_normal(rng));
            }
            ex.push_back({x, i % 3 == 0 ? Label::yes : Label::no});
        }
        TrainConfig cfg;
        cfg.l2 = 0.01 + uniform01(rng);
        cfg.class_weighting = trial % 2 == 0;
        std::vector<double> w(dim);
        for (auto& wi : w) wi = standard_normal(rng);
        const double b = standard_normal(rng);
        const auto obj = objective(ex, w, b, cfg, true);
        const double h = 1e-6;
        auto rel = [](double a, double num) { return std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8}); };
        for (std::size_t j = 0; j <= dim; ++j) {
            auto wp = w, wm = w;
            double bp = b, bm = b;
            if (j < dim) {
                wp[j] += h;
                wm[j] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            const double num = (objective(ex, wp, bp, cfg, false).loss - objective(ex, wm, bm, cfg, false).loss) / (2 * h);
            worst = std::max(worst, rel(j < dim ? obj.grad_w[j] : obj.grad_b, num));
        }
    }
    return {worst < 1e-5, "max relative error " + sci(worst) + " over 50 instances"};
}

// 5. Deterministic selection and planted-cluster recovery.
Outcome selection() {
    auto run = [] {
        SyntheticSpec spec;
        spec.n_docs = 1500;
        spec.seed = 5;
        auto corpus = std::make_shared<Corpus>();
        auto ds = corpus->add_dataset(make_synthetic_corpus(spec));
        corpus->create_task(spec.task, ds->id);
        EngineConfig cfg;
        cfg.seed = 55;
        cfg.background_training = false;
        Engine e(corpus, spec.task, cfg);
        e.bootstrap(BootstrapRandom{});
        std::string trace;
        for (int i = 0; i < 60; ++i) {
            auto n = e.next_to_label();
            e.submit_label(n.doc_id, ds->find(n.doc_id)->truth.at(spec.task), "oracle", Origin::oracle);
            trace += nlohmann::json(e.queue()).dump() + "\n";
        }
        return std::make_pair(trace, e.history().size());
    };
    const auto [a, cycles] = run();
    const auto [b, _] = run();
    const bool same = a == b;

    // planted clusters: 12 points, brute force over all 3^12 labelings
    std::size_t recovered = 0;
    const std::size_t trials = 10;
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng(derive_seed(500, {t}));
        const double centers[3][2] = {{0, 0}, {6, 0}, {0, 6}};
        std::vector<SparseVector> pts;
        std::vector<std::array<double, 2>> raw;
        for (std::size_t i = 0; i < 12; ++i) {
            std::array<double, 2> p{centers[i % 3][0] + 0.7 * standard_normal(rng),
                                    centers[i % 3][1] + 0.7 * standard_normal(rng)};
            raw.push_back(p);
            SparseVector v;
            v.dim = 2;
            v.entries = {{0, p[0]}, {1, p[1]}};
            pts.push_back(v);
        }
        double best = infinity;
        std::vector<std::size_t> best_labels;
        std::vector<std::size_t> labels(12);
        for (std::size_t code = 0; code < 531441; ++code) {
            std::size_t c = code;
            std::array<double, 3> sx{}, sy{}, cnt{};
            for (std::size_t i = 0; i < 12; ++i, c /= 3) {
                labels[i] = c % 3;
                sx[labels[i]] += raw[i][0];
                sy[labels[i]] += raw[i][1];
                cnt[labels[i]] += 1;
            }
            if (cnt[0] == 0 || cnt[1] == 0 || cnt[2] == 0) continue;
            double sse = 0;
            for (std::size_t i = 0; i < 12; ++i) {
                const auto j = labels[i];
                const double dx = raw[i][0] - sx[j] / cnt[j], dy = raw[i][1] - sy[j] / cnt[j];
                sse += dx * dx + dy * dy;
            }
            if (sse < best - 1e-12) {
                best = sse;
                best_labels = labels;
            }
        }
        const auto km = kmeans(pts, 3, t);
        std::map<std::size_t, std::size_t> fwd, back;
        bool match = true;
        for (std::size_t i = 0; i < 12; ++i) {
            auto [f, fi] = fwd.emplace(km.assignment[i], best_labels[i]);
            auto [r, ri] = back.emplace(best_labels[i], km.assignment[i]);
            match = match && f->second == best_labels[i] && r->second == km.assignment[i];
        }
        recovered += match;
    }
    return {same && recovered == trials,
            std::string("queues ") + (same ? "byte-identical" : "DIFFER") + " across two runs (" + std::to_string(cycles) +
                " cycles); planted clusters matched brute force in " + std::to_string(recovered) + "/" +
                std::to_string(trials) + " instances"};
}

ExperimentConfig base_experiment() {
    ExperimentConfig cfg;
    cfg.seeds = {1, 2, 3, 4, 5};
    cfg.engine.background_training = false;
    cfg.engine.eval_scope = EvalScope::probe;
    cfg.corpus.n_docs = 5000;
    return cfg;
}

// 6. Rare label: positives found by active learning vs random sampling.
Outcome rare_label() {
    auto cfg = base_experiment();
    cfg.corpus.prevalence = 0.03;
    cfg.corpus.signal = 0.3;
    cfg.resamples = 50;
    cfg.label_budget = 100;
    cfg.prelabeled = 40;
    // 30/70 high/low pool, the mix used for the rare-label runs
    cfg.engine.selection.high_fraction = 0.3;
    const auto ds = detail::load_corpus(cfg);
    const auto active = run_experiment(cfg, ds);
    auto pure = cfg;
    pure.engine.selection.high_fraction = 1.0;
    const auto pure_median = run_experiment(pure, ds).positives_found_median;
    auto rcfg = cfg;
    rcfg.label_budget = 200;
    rcfg.prelabeled = 0;
    const auto random = run_random_baseline(rcfg, ds);
    std::string per_seed;
    for (std::size_t i = 0; i < active.per_seed.size(); ++i) {
        per_seed += (i ? "," : "") + std::to_string(active.per_seed[i].positives_found) + "/" +
                    std::to_string(random.per_seed[i].positives_found);
    }
    const double a = active.positives_found_median, r = random.positives_found_median;
    return {a >= 2 * r, "median positives found: active " + fmt(a, 1) + " (budget 100, 40 pre-labeled) vs random " +
                            fmt(r, 1) + " (budget 200); per seed " + per_seed + "; high_fraction 1.0 for reference: " +
                            fmt(pure_median, 1)};
}

// 7. Mixing low-uncertainty documents into the pool.
Outcome mixing() {
    auto cfg = base_experiment();
    cfg.corpus.prevalence = 0.25;
    cfg.label_budget = 100;
    const auto ds = detail::load_corpus(cfg);
    auto auc_median = [&](double hf) {
        auto c = cfg;
        c.engine.selection.high_fraction = hf;
        const auto rep = run_experiment(c, ds);
        std::vector<double> v;
        for (const auto& s : rep.per_seed) v.push_back(s.report.auc_roc.mean);
        return median(v);
    };
    const double mixed = auc_median(0.7), pure = auc_median(1.0);
    return {mixed >= pure - 0.05 && mixed >= 0.85,
            "median probe AUC: high_fraction 0.7 -> " + fmt(mixed) + ", 1.0 -> " + fmt(pure) +
                " (need mixed >= pure - 0.05 and mixed >= 0.85)"};
}

// 8. Smaller alpha gives supersets.
Outcome nestedness() {
    Rng rng(8);
    std::size_t violations = 0, checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        CalibrationSet cs;
        const std::size_t n = 10 + uniform_index(rng, 200);
        for (std::size_t i = 0; i < n; ++i) {
            const double p = uniform01(rng);
            cs.add({p, 1 - p}, uniform01(rng) < 0.5 ? Label::yes : Label::no);
        }
        const auto wide = calibrate(cs, 0.05), narrow = calibrate(cs, 0.2);
        for (int j = 0; j < 200; ++j) {
            const double p = uniform01(rng);
            const ProbPair probs{p, 1 - p};
            violations += !prediction_set(probs, narrow).subset_of(prediction_set(probs, wide));
            ++checked;
        }
    }
    return {violations == 0, std::to_string(violations) + " violations over " + std::to_string(checked) + " test points"};
}

// 9. Scripted HTTP client against a live server.
Outcome end_to_end() {
    EngineConfig defaults;
    defaults.seed = 9;
    defaults.selection.k_top = 100;
    Workspace ws(defaults);
    Service service(ws);
    httplib::Server server;
    service.mount(server);
    const int port = server.bind_to_any_port("127.0.0.1");
    if (port <= 0) return {false, "could not bind"};
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    struct Stop {
        httplib::Server& s;
        std::thread& t;
        ~Stop() {
            s.stop();
            t.join();
        }
    } stop{server, listener};

    httplib::Client client("127.0.0.1", port);
    auto post = [&](const std::string& path, const nlohmann::json& body) {
        auto r = client.Post(path, body.dump(), "application/json");
        if (!r) throw std::runtime_error("no response from " + path);
        if (r->status >= 300) throw std::runtime_error(path + " -> " + std::to_string(r->status) + " " + r->body);
        return nlohmann::json::parse(r->body);
    };
    auto get = [&](const std::string& path) {
        auto r = client.Get(path);
        if (!r) throw std::runtime_error("no response from " + path);
        if (r->status >= 300) throw std::runtime_error(path + " -> " + std::to_string(r->status) + " " + r->body);
        return nlohmann::json::parse(r->body);
    };

    SyntheticSpec spec;
    spec.n_docs = 200;
    spec.seed = 9;
    auto docs = make_synthetic_corpus(spec);
    std::string csv_text = "id,text\n";
    std::map<std::string, Label> truth;
    for (const auto& d : docs.documents) {
        csv::append_row(csv_text, {d.id, d.text});
        truth[d.id] = d.truth.at(spec.task);
    }
    const auto dataset = post("/datasets", {{"content", csv_text}, {"id_column", "id"}});
    post("/tasks", {{"task_name", "review"}});
    for (int i = 0; i < 30; ++i) {
        const auto next = get("/tasks/review/queue/next");
        if (next.at("complete").get<bool>()) throw std::runtime_error("queue completed early");
        const auto id = next.at("doc_id").get<std::string>();
        post("/tasks/review/annotations", {{"doc_id", id}, {"cls", to_string(truth.at(id))}, {"annotator", "script"}});
    }
    nlohmann::json status;
    for (int i = 0; i < 600; ++i) {
        status = get("/tasks/review/status");
        if (!status.at("training_in_progress").get<bool>()) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    const auto metrics = get("/tasks/review/metrics");
    const auto cycles = metrics.at("convergence").size();
    const bool report_ok = metrics.at("report").at("evaluated").get<std::size_t>() > 0;
    return {cycles >= 2 && report_ok && status.at("labels_total") == 30,
            "dataset " + dataset.at("dataset_id").get<std::string>() + " (" + dataset.at("documents").dump() +
                " docs), 30 labels over HTTP, " + std::to_string(cycles) + " completed cycles, metrics report over " +
                metrics.at("report").at("evaluated").dump() + " labels, AUC " +
                metrics.at("report").at("auc_roc").at("mean").dump()};
}

} // namespace

int main() {
    criterion(1, "conformal coverage", 30, coverage);
    criterion(2, "quantile oracle", 5, quantile_oracle);
    criterion(3, "AUC oracle", 10, auc_oracle);
    criterion(4, "gradient check", 0, gradient_check);
    criterion(5, "selection determinism and planted clusters", 0, selection);
    criterion(6, "rare-label dominance", 300, rare_label);
    criterion(7, "mixing benefit", 0, mixing);
    criterion(8, "nestedness", 0, nestedness);
    criterion(9, "end-to-end API", 0, end_to_end);
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
