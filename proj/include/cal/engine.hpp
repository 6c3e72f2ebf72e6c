#pragma once

#include "classifier.hpp"
#include "conformal.hpp"
#include "corpus.hpp"
#include "embed.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "random.hpp"
#include "select.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <iostream>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_set>
#include <variant>
#include <vector>

namespace cal {

struct RetrainPolicy {
    enum class Kind { on_batch_consumed, every_n_labels };
    Kind kind = Kind::on_batch_consumed;
    std::size_t n = 0;

    static RetrainPolicy every(std::size_t n) { return {Kind::every_n_labels, n}; }

    std::string to_string() const {
        return kind == Kind::on_batch_consumed ? "on_batch_consumed" : "every_n_labels:" + std::to_string(n);
    }

    static RetrainPolicy parse(std::string_view s) {
        if (s == "on_batch_consumed") return {};
        constexpr std::string_view prefix = "every_n_labels";
        if (s.substr(0, prefix.size()) == prefix) {
            auto rest = s.substr(prefix.size());
            if (!rest.empty() && (rest[0] == ':' || rest[0] == '(')) {
                rest.remove_prefix(1);
                if (!rest.empty() && rest.back() == ')') rest.remove_suffix(1);
                std::size_t n = 0;
                try {
                    n = std::stoul(std::string(rest));
                } catch (const std::exception&) {
                    n = 0;
                }
                if (n > 0) return every(n);
            }
        }
        throw Error(ErrorCode::bad_request,
                    "retrain_policy must be on_batch_consumed or every_n_labels:<n>, got '" + std::string(s) + "'");
    }
};

enum class EvalScope { labeled, probe };

inline EvalScope parse_eval_scope(std::string_view s) {
    if (s == "labeled") return EvalScope::labeled;
    if (s == "probe") return EvalScope::probe;
    throw Error(ErrorCode::bad_request, "eval_scope must be labeled or probe");
}

inline std::string_view to_string(EvalScope s) { return s == EvalScope::labeled ? "labeled" : "probe"; }

struct EngineConfig {
    double alpha = 0.1;
    double validation_fraction = 0.2;
    std::size_t min_labels_before_training = 10;
    SelectionConfig selection;
    RetrainPolicy retrain;
    std::uint64_t seed = 0;
    TrainConfig train;
    VocabParams vocab;
    EvalScope eval_scope = EvalScope::labeled;
    /// train on a worker thread; off means cycles run inline inside the call
    /// that triggers them
    bool background_training = true;

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::bad_request, "alpha must lie in (0, 1)");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
            throw Error(ErrorCode::bad_request, "validation_fraction must lie in (0, 1)");
        }
        if (min_labels_before_training == 0) {
            throw Error(ErrorCode::bad_request, "min_labels_before_training must be positive");
        }
        selection.validate();
        if (!(train.l2 > 0.0)) throw Error(ErrorCode::bad_request, "l2 must be positive");
    }
};

inline nlohmann::json to_json(const EngineConfig& c) {
    return {{"alpha", c.alpha},
            {"validation_fraction", c.validation_fraction},
            {"min_labels_before_training", c.min_labels_before_training},
            {"k_top", c.selection.k_top},
            {"k_cluster", c.selection.k_cluster},
            {"high_fraction", c.selection.high_fraction},
            {"retrain_policy", c.retrain.to_string()},
            {"seed", c.seed},
            {"l2", c.train.l2},
            {"max_epochs", c.train.max_epochs},
            {"class_weighting", c.train.class_weighting},
            {"min_df", c.vocab.min_df},
            {"max_features", c.vocab.max_features},
            {"lowercase", c.vocab.lowercase},
            {"eval_scope", to_string(c.eval_scope)},
            {"background_training", c.background_training}};
}

inline EngineConfig engine_config_from_json(const nlohmann::json& j) {
    EngineConfig c;
    c.alpha = j.at("alpha").get<double>();
    c.validation_fraction = j.at("validation_fraction").get<double>();
    c.min_labels_before_training = j.at("min_labels_before_training").get<std::size_t>();
    c.selection.k_top = j.at("k_top").get<std::size_t>();
    c.selection.k_cluster = j.at("k_cluster").get<std::size_t>();
    c.selection.high_fraction = j.at("high_fraction").get<double>();
    c.retrain = RetrainPolicy::parse(j.at("retrain_policy").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.train.l2 = j.at("l2").get<double>();
    c.train.max_epochs = j.at("max_epochs").get<int>();
    c.train.class_weighting = j.at("class_weighting").get<bool>();
    c.vocab.min_df = j.at("min_df").get<std::size_t>();
    c.vocab.max_features = j.at("max_features").get<std::size_t>();
    c.vocab.lowercase = j.at("lowercase").get<bool>();
    c.eval_scope = parse_eval_scope(j.at("eval_scope").get<std::string>());
    c.background_training = j.at("background_training").get<bool>();
    return c;
}

inline nlohmann::json to_json(const CycleMetrics& m) {
    return {{"cycle_index", m.cycle_index},     {"labels_used", m.labels_used},
            {"train_size", m.train_size},       {"validation_size", m.validation_size},
            {"model_version", m.model_version}, {"degenerate_model", m.degenerate_model},
            {"auc", m.auc},                     {"degenerate_auc", m.degenerate_auc},
            {"yes_count", m.yes_count},         {"no_count", m.no_count},
            {"threshold_yes", threshold_json(m.threshold_yes)},
            {"threshold_no", threshold_json(m.threshold_no)}};
}

inline CycleMetrics cycle_metrics_from_json(const nlohmann::json& j) {
    CycleMetrics m;
    m.cycle_index = j.at("cycle_index").get<std::size_t>();
    m.labels_used = j.at("labels_used").get<std::size_t>();
    m.train_size = j.at("train_size").get<std::size_t>();
    m.validation_size = j.at("validation_size").get<std::size_t>();
    m.model_version = j.at("model_version").get<int>();
    m.degenerate_model = j.at("degenerate_model").get<bool>();
    m.auc = j.at("auc").get<double>();
    m.degenerate_auc = j.at("degenerate_auc").get<bool>();
    m.yes_count = j.at("yes_count").get<std::size_t>();
    m.no_count = j.at("no_count").get<std::size_t>();
    m.threshold_yes = threshold_from_json(j.at("threshold_yes"));
    m.threshold_no = threshold_from_json(j.at("threshold_no"));
    return m;
}

/// Vocabulary plus the TF-IDF vector of every document, by dataset position.
struct FeatureStore {
    Vocabulary vocab;
    std::vector<SparseVector> vectors;

    static std::shared_ptr<const FeatureStore> build(const Dataset& ds, const VocabParams& params,
                                                     std::optional<Vocabulary> preset = std::nullopt) {
        auto fs = std::make_shared<FeatureStore>();
        std::vector<std::string> texts;
        texts.reserve(ds.size());
        for (const auto& d : ds.documents) texts.push_back(d.text);
        fs->vocab = preset ? std::move(*preset) : fit_vocab(texts, params);
        fs->vectors.reserve(ds.size());
        for (const auto& t : texts) fs->vectors.push_back(transform(t, fs->vocab));
        return fs;
    }
};

struct BootstrapRandom {};
struct BootstrapPreLabeled {
    std::vector<Annotation> annotations;
};
struct BootstrapKeyword {
    std::vector<std::string> terms;
};
using BootstrapMode = std::variant<BootstrapRandom, BootstrapPreLabeled, BootstrapKeyword>;

struct BootstrapResult {
    std::size_t queue_size = 0;
    std::size_t keyword_matches = 0;
    std::size_t prelabeled = 0;
    std::optional<std::string> warning;
};

struct NextDoc {
    enum class Status { document, complete };
    Status status = Status::complete;
    std::string doc_id;
    std::size_t cycle_index = 0;
    /// "queue", "refill" or "fallback"
    std::string source;
};

struct Ack {
    std::size_t labels_total = 0;
    std::size_t cycle_index = 0;
    bool training_in_progress = false;
    bool superseded = false;
};

struct EngineStatus {
    std::size_t cycle_index = 0;
    std::size_t labels_total = 0;
    std::size_t yes_count = 0;
    std::size_t no_count = 0;
    bool training_in_progress = false;
    std::size_t queue_depth = 0;
    std::size_t unlabeled = 0;
    int model_version = 0;
};

/// Active-learning loop for one labeling task. All state transitions are
/// serialized through one mutex; at most one training job runs at a time.
class Engine {
public:
    Engine(std::shared_ptr<Corpus> corpus, std::string task, EngineConfig cfg,
           std::optional<Vocabulary> vocab = std::nullopt)
        : corpus_(std::move(corpus)), task_(std::move(task)), cfg_(std::move(cfg)) {
        cfg_.validate();
        const auto t = corpus_->task(task_);
        dataset_ = corpus_->dataset(t.dataset_id);
        features_ = FeatureStore::build(*dataset_, cfg_.vocab, std::move(vocab));
    }

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    ~Engine() {
        if (worker_.joinable()) worker_.join();
    }

    const std::string& task() const { return task_; }
    const EngineConfig& config() const { return cfg_; }
    const Dataset& dataset() const { return *dataset_; }
    const FeatureStore& features() const { return *features_; }

    /// Held-out documents: never served for labeling; used when eval_scope is
    /// probe.
    void set_probe(const std::vector<std::pair<std::string, Label>>& probe) {
        std::lock_guard lock(mu_);
        probe_.clear();
        probe_ids_.clear();
        for (const auto& [id, label] : probe) {
            auto pos = dataset_->position(id);
            if (!pos) throw Error(ErrorCode::not_found, "unknown probe document '" + id + "'");
            probe_.push_back({*pos, label});
            probe_ids_.insert(id);
        }
        std::erase_if(queue_, [&](const std::string& id) { return probe_ids_.count(id) > 0; });
    }

    BootstrapResult bootstrap(const BootstrapMode& mode) {
        std::unique_lock lock(mu_);
        BootstrapResult result;
        if (const auto* pre = std::get_if<BootstrapPreLabeled>(&mode)) {
            for (auto a : pre->annotations) {
                a.task = task_;
                a.origin = Origin::pre_labeled;
                corpus_->record_annotation(std::move(a));
                ++submissions_since_cycle_;
            }
            result.prelabeled = pre->annotations.size();
        }
        const auto labeled = labeled_ids_locked();
        std::vector<std::string> head;
        std::vector<std::string> rest;
        if (const auto* kw = std::get_if<BootstrapKeyword>(&mode)) {
            std::unordered_set<std::string> wanted;
            for (const auto& term : kw->terms) {
                for (auto& tok : tokenize(term, true)) wanted.insert(std::move(tok));
            }
            for (const auto& d : dataset_->documents) {
                if (labeled.count(d.id) || probe_ids_.count(d.id)) continue;
                bool hit = false;
                for (const auto& tok : tokenize(d.text, true)) {
                    if (wanted.count(tok)) {
                        hit = true;
                        break;
                    }
                }
                (hit ? head : rest).push_back(d.id);
            }
            result.keyword_matches = head.size();
            if (head.empty()) {
                result.warning = "no document matched the bootstrap keywords; using a random queue";
                std::clog << "warning: " << *result.warning << '\n';
            }
        } else {
            for (const auto& d : dataset_->documents) {
                if (!labeled.count(d.id) && !probe_ids_.count(d.id)) rest.push_back(d.id);
            }
        }
        Rng rng(derive_seed(cfg_.seed, {0xB007}));
        shuffle(std::span<std::string>(rest), rng);
        queue_.assign(head.begin(), head.end());
        queue_.insert(queue_.end(), rest.begin(), rest.end());
        result.queue_size = queue_.size();
        maybe_retrain_locked(lock);
        return result;
    }

    NextDoc next_to_label() {
        std::unique_lock lock(mu_);
        for (int attempt = 0; attempt < 2; ++attempt) {
            const auto labeled = labeled_ids_locked();
            if (unlabeled_count_locked(labeled) == 0) {
                return {NextDoc::Status::complete, {}, cycle_index_, {}};
            }
            while (!queue_.empty()) {
                auto id = std::move(queue_.front());
                queue_.pop_front();
                if (!labeled.count(id) && !probe_ids_.count(id)) {
                    served_.insert(id);
                    return {NextDoc::Status::document, std::move(id), cycle_index_, "queue"};
                }
            }
            if (attempt == 0 && !training_ && submissions_since_cycle_ > 0 &&
                labeled.size() >= cfg_.min_labels_before_training) {
                start_cycle_locked(lock);
                if (!training_) continue; // inline cycle refilled the queue
            }
            std::set<std::string> excluded(served_.begin(), served_.end());
            excluded.insert(labeled.begin(), labeled.end());
            excluded.insert(probe_ids_.begin(), probe_ids_.end());
            if (has_pool_) {
                auto r = refill(pool_, excluded, 1, derive_seed(cfg_.seed, {cycle_index_, 3, draw_counter_++}));
                if (!r.ids.empty()) {
                    served_.insert(r.ids.front());
                    return {NextDoc::Status::document, r.ids.front(), cycle_index_, "refill"};
                }
            }
            std::vector<std::string> candidates;
            for (const auto& d : dataset_->documents) {
                if (!excluded.count(d.id)) candidates.push_back(d.id);
            }
            if (candidates.empty()) {
                // everything unlabeled has been served once already
                for (const auto& d : dataset_->documents) {
                    if (!labeled.count(d.id) && !probe_ids_.count(d.id)) candidates.push_back(d.id);
                }
            }
            Rng rng(derive_seed(cfg_.seed, {cycle_index_, 4, draw_counter_++}));
            auto id = candidates[static_cast<std::size_t>(uniform_index(rng, candidates.size()))];
            served_.insert(id);
            return {NextDoc::Status::document, std::move(id), cycle_index_, "fallback"};
        }
        return {NextDoc::Status::complete, {}, cycle_index_, {}};
    }

    Ack submit_label(const std::string& doc_id, Label label, std::string annotator, Origin origin = Origin::manual) {
        std::unique_lock lock(mu_);
        Ack ack;
        ack.superseded = corpus_->record_annotation({doc_id, task_, label, origin, std::move(annotator), 0});
        std::erase(queue_, doc_id);
        served_.erase(doc_id);
        ++submissions_since_cycle_;
        maybe_retrain_locked(lock);
        ack.labels_total = corpus_->label_counts(task_).total();
        ack.cycle_index = cycle_index_;
        ack.training_in_progress = training_;
        return ack;
    }

    /// Runs one cycle now. Throws busy while training and precondition below
    /// the minimum label count. With background training the cycle starts on
    /// the worker and this returns immediately.
    void run_cycle() {
        std::unique_lock lock(mu_);
        if (training_) throw Error(ErrorCode::busy, "a training cycle is already in progress");
        const auto n = corpus_->label_counts(task_).total();
        if (n < cfg_.min_labels_before_training) {
            throw Error(ErrorCode::precondition, "need " + std::to_string(cfg_.min_labels_before_training) +
                                                     " labels before training, have " + std::to_string(n));
        }
        start_cycle_locked(lock);
    }

    void wait_idle() {
        std::unique_lock lock(mu_);
        idle_cv_.wait(lock, [&] { return !training_; });
    }

    std::optional<std::string> last_error() const {
        std::lock_guard lock(mu_);
        return last_error_;
    }

    EngineStatus status() const {
        std::lock_guard lock(mu_);
        const auto counts = corpus_->label_counts(task_);
        const auto labeled = labeled_ids_locked();
        return {cycle_index_,
                counts.total(),
                counts.yes,
                counts.no,
                training_,
                queue_.size(),
                unlabeled_count_locked(labeled),
                model_ ? model_->version : 0};
    }

    std::vector<CycleMetrics> history() const {
        std::lock_guard lock(mu_);
        return history_;
    }

    std::vector<std::string> queue() const {
        std::lock_guard lock(mu_);
        return {queue_.begin(), queue_.end()};
    }

    std::vector<PredictionRecord> records() const {
        std::lock_guard lock(mu_);
        return records_;
    }

    std::optional<Model> model() const {
        std::lock_guard lock(mu_);
        return model_;
    }

    Thresholds thresholds() const {
        std::lock_guard lock(mu_);
        return thresholds_;
    }

    Pool pool() const {
        std::lock_guard lock(mu_);
        return pool_;
    }

    /// Current model's probabilities for any document of the dataset.
    ProbPair predict(const std::string& doc_id) const {
        std::lock_guard lock(mu_);
        auto pos = dataset_->position(doc_id);
        if (!pos) throw Error(ErrorCode::not_found, "unknown document '" + doc_id + "'");
        if (!model_) return {};
        return predict_proba(*model_, features_->vectors[*pos]);
    }

    /// Bootstrap metric report of the current model over the configured
    /// evaluation scope; yes/no counts are the labeled counts.
    MetricReport report(std::size_t resamples = default_resamples) const {
        std::lock_guard lock(mu_);
        std::vector<double> scores;
        std::vector<Label> truth;
        if (model_) {
            if (cfg_.eval_scope == EvalScope::probe) {
                for (const auto& [pos, label] : probe_) {
                    scores.push_back(predict_proba(*model_, features_->vectors[pos]).yes);
                    truth.push_back(label);
                }
            } else {
                for (const auto& a : corpus_->active_annotations(task_)) {
                    scores.push_back(predict_proba(*model_, features_->vectors[*dataset_->position(a.doc_id)]).yes);
                    truth.push_back(a.label);
                }
            }
        }
        auto r = evaluate_report(scores, truth, resamples, derive_seed(cfg_.seed, {cycle_index_, 5}));
        const auto counts = corpus_->label_counts(task_);
        r.yes_count = counts.yes;
        r.no_count = counts.no;
        return r;
    }

    /// Complete serializable state; equal states serialize to equal bytes.
    nlohmann::json state_json() const {
        std::lock_guard lock(mu_);
        nlohmann::json j;
        j["task"] = task_;
        j["config"] = to_json(cfg_);
        j["vocabulary"] = features_->vocab.to_json();
        j["cycle_index"] = cycle_index_;
        j["model"] = model_ ? to_json(*model_) : nlohmann::json();
        j["thresholds"] = to_json(thresholds_);
        j["queue"] = std::vector<std::string>(queue_.begin(), queue_.end());
        j["batch"] = batch_;
        j["served"] = std::vector<std::string>(served_.begin(), served_.end());
        auto recs = nlohmann::json::array();
        for (const auto& r : records_) recs.push_back(to_json(r));
        j["records"] = std::move(recs);
        auto pool_json = [](const std::vector<ScoredDoc>& part) {
            auto a = nlohmann::json::array();
            for (const auto& d : part) a.push_back({d.doc_id, d.s_x});
            return a;
        };
        j["pool"] = {{"high", pool_json(pool_.high)}, {"low", pool_json(pool_.low)}, {"present", has_pool_}};
        auto hist = nlohmann::json::array();
        for (const auto& h : history_) hist.push_back(to_json(h));
        j["history"] = std::move(hist);
        j["submissions_since_cycle"] = submissions_since_cycle_;
        j["draw_counter"] = draw_counter_;
        auto probe = nlohmann::json::array();
        for (const auto& [pos, label] : probe_) probe.push_back({dataset_->documents[pos].id, to_string(label)});
        j["probe"] = std::move(probe);
        return j;
    }

    /// Rebuilds an engine from state_json(); requires the corpus to hold the
    /// task and its dataset already.
    static std::unique_ptr<Engine> restore(std::shared_ptr<Corpus> corpus, const nlohmann::json& j) {
        auto engine = std::make_unique<Engine>(std::move(corpus), j.at("task").get<std::string>(),
                                               engine_config_from_json(j.at("config")),
                                               Vocabulary::from_json(j.at("vocabulary")));
        std::vector<std::pair<std::string, Label>> probe;
        for (const auto& p : j.at("probe")) probe.emplace_back(p[0].get<std::string>(), *parse_label(p[1].get<std::string>()));
        engine->set_probe(probe);
        std::lock_guard lock(engine->mu_);
        auto& e = *engine;
        e.cycle_index_ = j.at("cycle_index").get<std::size_t>();
        if (!j.at("model").is_null()) e.model_ = model_from_json(j.at("model"));
        e.thresholds_ = thresholds_from_json(j.at("thresholds"));
        auto q = j.at("queue").get<std::vector<std::string>>();
        e.queue_.assign(q.begin(), q.end());
        e.batch_ = j.at("batch").get<std::vector<std::string>>();
        auto served = j.at("served").get<std::vector<std::string>>();
        e.served_ = std::set<std::string>(served.begin(), served.end());
        for (const auto& r : j.at("records")) e.records_.push_back(record_from_json(r));
        for (const auto& d : j.at("pool").at("high")) e.pool_.high.push_back({d[0].get<std::string>(), d[1].get<double>()});
        for (const auto& d : j.at("pool").at("low")) e.pool_.low.push_back({d[0].get<std::string>(), d[1].get<double>()});
        e.has_pool_ = j.at("pool").at("present").get<bool>();
        for (const auto& h : j.at("history")) e.history_.push_back(cycle_metrics_from_json(h));
        e.submissions_since_cycle_ = j.at("submissions_since_cycle").get<std::size_t>();
        e.draw_counter_ = j.at("draw_counter").get<std::uint64_t>();
        return engine;
    }

private:
    struct CycleInput {
        std::vector<Annotation> labels; // active annotations, by doc id
        std::size_t cycle_index = 0;
        int model_version = 0;
        std::vector<std::pair<std::size_t, Label>> probe;
        std::set<std::string> probe_ids;
    };

    struct CycleOutput {
        std::size_t cycle_index = 0;
        Model model;
        Thresholds thresholds;
        std::vector<PredictionRecord> records;
        Selection selection;
        CycleMetrics metrics;
    };

    std::unordered_set<std::string> labeled_ids_locked() const {
        std::unordered_set<std::string> ids;
        for (const auto& a : corpus_->active_annotations(task_)) ids.insert(a.doc_id);
        return ids;
    }

    std::size_t unlabeled_count_locked(const std::unordered_set<std::string>& labeled) const {
        std::size_t n = 0;
        for (const auto& d : dataset_->documents) {
            n += !labeled.count(d.id) && !probe_ids_.count(d.id);
        }
        return n;
    }

    bool retrain_due_locked() const {
        if (training_ || submissions_since_cycle_ == 0) return false;
        const auto labeled = labeled_ids_locked();
        if (labeled.size() < cfg_.min_labels_before_training) return false;
        if (!model_) return true;
        if (cfg_.retrain.kind == RetrainPolicy::Kind::every_n_labels) {
            return submissions_since_cycle_ >= cfg_.retrain.n;
        }
        // labels gathered from refill while the last cycle trained count as
        // consuming a batch once there are as many as the batch held
        if (!batch_.empty() && submissions_since_cycle_ >= batch_.size()) return true;
        return std::all_of(batch_.begin(), batch_.end(), [&](const std::string& id) { return labeled.count(id) > 0; });
    }

    void maybe_retrain_locked(std::unique_lock<std::mutex>& lock) {
        if (retrain_due_locked()) start_cycle_locked(lock);
    }

    CycleInput snapshot_locked() {
        CycleInput in;
        in.labels = corpus_->active_annotations(task_);
        in.cycle_index = cycle_index_ + 1;
        in.model_version = (model_ ? model_->version : 0) + 1;
        in.probe = probe_;
        in.probe_ids = probe_ids_;
        submissions_since_cycle_ = 0;
        return in;
    }

    void start_cycle_locked(std::unique_lock<std::mutex>& lock) {
        auto input = snapshot_locked();
        if (!cfg_.background_training) {
            commit_locked(compute_cycle(input));
            return;
        }
        training_ = true;
        lock.unlock();
        if (worker_.joinable()) worker_.join();
        lock.lock();
        worker_ = std::thread([this, input = std::move(input)]() mutable { worker_loop(std::move(input)); });
    }

    void worker_loop(CycleInput input) {
        for (;;) {
            std::optional<CycleOutput> out;
            std::string error;
            try {
                out = compute_cycle(input);
            } catch (const std::exception& e) {
                error = e.what();
            }
            std::lock_guard lock(mu_);
            if (out) {
                commit_locked(std::move(*out));
            } else {
                last_error_ = error;
            }
            training_ = false;
            if (out && retrain_due_locked()) {
                training_ = true;
                input = snapshot_locked();
                continue;
            }
            idle_cv_.notify_all();
            return;
        }
    }

    CycleOutput compute_cycle(const CycleInput& in) const {
        CycleOutput out;
        out.cycle_index = in.cycle_index;
        const auto& fs = *features_;
        auto vec_of = [&](const std::string& id) -> const SparseVector& { return fs.vectors[*dataset_->position(id)]; };

        // fresh train/validation split every cycle
        std::vector<std::size_t> order(in.labels.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng split_rng(derive_seed(cfg_.seed, {in.cycle_index, 1}));
        shuffle(std::span<std::size_t>(order), split_rng);
        const auto n_val = static_cast<std::size_t>(
            std::lround(cfg_.validation_fraction * static_cast<double>(in.labels.size())));
        std::vector<Example> train_set;
        std::vector<std::size_t> validation;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const auto& a = in.labels[order[i]];
            if (i < n_val) {
                validation.push_back(order[i]);
            } else {
                train_set.push_back({vec_of(a.doc_id), a.label});
            }
        }

        auto tcfg = cfg_.train;
        tcfg.seed = derive_seed(cfg_.seed, {in.cycle_index, 6});
        out.model = train(train_set, fs.vocab.size(), tcfg, in.model_version);

        CalibrationSet cal;
        for (auto idx : validation) {
            const auto& a = in.labels[idx];
            cal.add(predict_proba(out.model, vec_of(a.doc_id)), a.label);
        }
        out.thresholds = calibrate(cal, cfg_.alpha);

        std::unordered_set<std::string> labeled;
        for (const auto& a : in.labels) labeled.insert(a.doc_id);
        for (std::size_t i = 0; i < dataset_->size(); ++i) {
            const auto& id = dataset_->documents[i].id;
            if (labeled.count(id) || in.probe_ids.count(id)) continue;
            out.records.push_back(make_record(id, predict_proba(out.model, fs.vectors[i]), out.thresholds));
        }

        auto scfg = cfg_.selection;
        scfg.seed = derive_seed(cfg_.seed, {in.cycle_index, 2});
        out.selection = select_batch(out.records, vec_of, scfg);

        std::vector<double> scores;
        std::vector<Label> truth;
        if (cfg_.eval_scope == EvalScope::probe) {
            for (const auto& [pos, label] : in.probe) {
                scores.push_back(predict_proba(out.model, fs.vectors[pos]).yes);
                truth.push_back(label);
            }
        } else {
            for (const auto& a : in.labels) {
                scores.push_back(predict_proba(out.model, vec_of(a.doc_id)).yes);
                truth.push_back(a.label);
            }
        }
        const auto auc = auc_roc(scores, truth);
        auto& m = out.metrics;
        m.cycle_index = in.cycle_index;
        m.labels_used = in.labels.size();
        m.train_size = train_set.size();
        m.validation_size = validation.size();
        m.model_version = out.model.version;
        m.degenerate_model = out.model.degenerate;
        m.auc = auc.value;
        m.degenerate_auc = auc.degenerate;
        for (const auto& a : in.labels) (a.label == Label::yes ? m.yes_count : m.no_count)++;
        m.threshold_yes = out.thresholds.of(Label::yes);
        m.threshold_no = out.thresholds.of(Label::no);
        return out;
    }

    void commit_locked(CycleOutput out) {
        const auto labeled = labeled_ids_locked();
        cycle_index_ = out.cycle_index;
        model_ = std::move(out.model);
        thresholds_ = out.thresholds;
        records_.clear();
        for (auto& r : out.records) {
            if (!labeled.count(r.doc_id)) records_.push_back(std::move(r));
        }
        pool_ = std::move(out.selection.pool);
        has_pool_ = true;
        batch_ = out.selection.queue;
        queue_.clear();
        for (auto& id : out.selection.queue) {
            if (!labeled.count(id)) queue_.push_back(std::move(id));
        }
        served_.clear();
        history_.push_back(out.metrics);
    }

    std::shared_ptr<Corpus> corpus_;
    std::string task_;
    EngineConfig cfg_;
    std::shared_ptr<const Dataset> dataset_;
    std::shared_ptr<const FeatureStore> features_;

    mutable std::mutex mu_;
    std::condition_variable idle_cv_;
    std::thread worker_;
    bool training_ = false;
    std::optional<std::string> last_error_;

    std::size_t cycle_index_ = 0;
    std::optional<Model> model_;
    Thresholds thresholds_;
    std::deque<std::string> queue_;
    std::vector<std::string> batch_;
    std::set<std::string> served_;
    std::vector<PredictionRecord> records_;
    Pool pool_;
    bool has_pool_ = false;
    std::vector<CycleMetrics> history_;
    std::size_t submissions_since_cycle_ = 0;
    std::uint64_t draw_counter_ = 0;
    std::vector<std::pair<std::size_t, Label>> probe_;
    std::set<std::string> probe_ids_;
};

} // namespace cal
