#pragma once

// A corpus together with one engine per task, and the versioned snapshot
// file holding both.
//
// Snapshot layout: the first line is the magic "CALV1"; every following line
// is one JSON record with a "kind" of manifest, dataset, task, annotation or
// engine, in that order.

#include "corpus.hpp"
#include "engine.hpp"
#include "error.hpp"

#include <json.hpp>

#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

namespace cal {

inline constexpr std::string_view snapshot_magic = "CALV1";
inline constexpr int snapshot_format_version = 1;

class Workspace {
public:
    explicit Workspace(EngineConfig defaults = {}) : defaults_(std::move(defaults)) {}

    Corpus& corpus() { return *corpus_; }
    const Corpus& corpus() const { return *corpus_; }
    std::shared_ptr<Corpus> corpus_ptr() { return corpus_; }
    const EngineConfig& defaults() const { return defaults_; }

    std::shared_ptr<const Dataset> add_dataset(Dataset ds) { return corpus_->add_dataset(std::move(ds)); }

    /// Next free "ds-<n>" id.
    std::string next_dataset_id() const {
        auto ids = corpus_->dataset_ids();
        for (std::size_t n = ids.size() + 1;; ++n) {
            auto id = "ds-" + std::to_string(n);
            if (std::find(ids.begin(), ids.end(), id) == ids.end()) return id;
        }
    }

    /// Creates the task and its engine with a random bootstrap queue. An empty
    /// dataset id binds to the most recently added dataset.
    Engine& create_task(const std::string& name, std::string dataset_id = {},
                        std::optional<EngineConfig> cfg = std::nullopt) {
        std::lock_guard lock(mu_);
        if (dataset_id.empty()) {
            auto ids = corpus_->dataset_ids();
            if (ids.empty()) throw Error(ErrorCode::bad_request, "no dataset has been ingested yet");
            dataset_id = latest_dataset_;
            if (dataset_id.empty()) dataset_id = ids.back();
        }
        auto config = cfg.value_or(defaults_);
        config.validate();
        corpus_->create_task(name, dataset_id);
        auto engine = std::make_unique<Engine>(corpus_, name, config);
        engine->bootstrap(BootstrapRandom{});
        auto& ref = *engine;
        engines_.emplace(name, std::move(engine));
        return ref;
    }

    void note_latest_dataset(const std::string& id) {
        std::lock_guard lock(mu_);
        latest_dataset_ = id;
    }

    Engine& engine(const std::string& task) {
        std::lock_guard lock(mu_);
        auto it = engines_.find(task);
        if (it == engines_.end()) throw Error(ErrorCode::not_found, "unknown task '" + task + "'");
        return *it->second;
    }

    std::vector<std::string> task_names() const {
        std::lock_guard lock(mu_);
        std::vector<std::string> out;
        for (const auto& [name, _] : engines_) out.push_back(name);
        return out;
    }

    /// Full state as snapshot text. Waits for running training jobs first.
    std::string snapshot() const {
        std::vector<Engine*> engines;
        {
            std::lock_guard lock(mu_);
            for (const auto& [_, e] : engines_) engines.push_back(e.get());
        }
        for (auto* e : engines) e->wait_idle();

        std::string out(snapshot_magic);
        out += '\n';
        auto line = [&](const nlohmann::json& j) {
            out += j.dump();
            out += '\n';
        };
        line({{"kind", "manifest"},
              {"format_version", snapshot_format_version},
              {"defaults", to_json(defaults_)},
              {"latest_dataset", latest_dataset_}});
        for (const auto& id : corpus_->dataset_ids()) {
            auto ds = corpus_->dataset(id);
            auto docs = nlohmann::json::array();
            for (const auto& d : ds->documents) {
                nlohmann::json truth = nlohmann::json::object();
                for (const auto& [task, label] : d.truth) truth[task] = to_string(label);
                docs.push_back({{"id", d.id}, {"text", d.text}, {"truth", truth}});
            }
            line({{"kind", "dataset"}, {"id", ds->id}, {"source_uri", ds->source_uri}, {"documents", docs}});
        }
        for (const auto& t : corpus_->tasks()) {
            line({{"kind", "task"}, {"name", t.name}, {"dataset_id", t.dataset_id}, {"created_at", t.created_at}});
        }
        for (const auto& a : corpus_->log()) {
            auto j = to_json(a);
            j["kind"] = "annotation";
            line(j);
        }
        for (auto* e : engines) {
            line({{"kind", "engine"}, {"state", e->state_json()}});
        }
        return out;
    }

    void save(const std::string& path) const {
        const auto text = snapshot();
        const auto tmp = path + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error(ErrorCode::not_found, "cannot write " + tmp);
            out << text;
        }
        if (std::rename(tmp.c_str(), path.c_str()) != 0) {
            throw Error(ErrorCode::not_found, "cannot replace " + path);
        }
    }

    /// Parses a snapshot into a fresh workspace; the caller's workspace is
    /// untouched when this throws.
    static std::unique_ptr<Workspace> from_snapshot(std::string_view text) {
        auto nl = text.find('\n');
        if (text.substr(0, nl) != snapshot_magic) {
            throw Error(ErrorCode::version, "not a snapshot: expected magic header CALV1");
        }
        std::vector<nlohmann::json> records;
        std::size_t pos = nl == std::string_view::npos ? text.size() : nl + 1;
        while (pos < text.size()) {
            auto end = text.find('\n', pos);
            auto line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
            pos = end == std::string_view::npos ? text.size() : end + 1;
            if (line.empty()) continue;
            try {
                records.push_back(nlohmann::json::parse(line));
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorCode::parse, std::string("corrupt snapshot record: ") + e.what());
            }
        }
        if (records.empty() || records.front().value("kind", "") != "manifest") {
            throw Error(ErrorCode::version, "snapshot lacks a manifest");
        }
        const auto& manifest = records.front();
        if (manifest.value("format_version", 0) != snapshot_format_version) {
            throw Error(ErrorCode::version, "unsupported snapshot format version " +
                                                std::to_string(manifest.value("format_version", 0)));
        }
        auto ws = std::make_unique<Workspace>(engine_config_from_json(manifest.at("defaults")));
        ws->latest_dataset_ = manifest.value("latest_dataset", "");
        std::vector<Annotation> log;
        try {
            for (std::size_t i = 1; i < records.size(); ++i) {
                const auto& r = records[i];
                const auto kind = r.at("kind").get<std::string>();
                if (kind == "dataset") {
                    Dataset ds;
                    ds.id = r.at("id").get<std::string>();
                    ds.source_uri = r.at("source_uri").get<std::string>();
                    for (const auto& d : r.at("documents")) {
                        Document doc{d.at("id").get<std::string>(), d.at("text").get<std::string>(), {}};
                        for (const auto& [task, label] : d.at("truth").items()) {
                            doc.truth[task] = *parse_label(label.get<std::string>());
                        }
                        ds.documents.push_back(std::move(doc));
                    }
                    ws->corpus_->add_dataset(std::move(ds));
                } else if (kind == "task") {
                    ws->corpus_->restore_task({r.at("name").get<std::string>(), r.at("dataset_id").get<std::string>(),
                                               r.at("created_at").get<std::int64_t>()});
                } else if (kind == "annotation") {
                    log.push_back(annotation_from_json(r));
                } else if (kind == "engine") {
                    if (!log.empty()) {
                        ws->corpus_->restore_log(std::move(log));
                        log.clear();
                    }
                    auto engine = Engine::restore(ws->corpus_, r.at("state"));
                    auto name = engine->task();
                    ws->engines_.emplace(std::move(name), std::move(engine));
                } else {
                    throw Error(ErrorCode::parse, "unknown snapshot record kind '" + kind + "'");
                }
            }
            if (!log.empty()) ws->corpus_->restore_log(std::move(log));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::parse, std::string("corrupt snapshot: ") + e.what());
        }
        return ws;
    }

    static std::unique_ptr<Workspace> load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::not_found, "file not found: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return from_snapshot(buf.str());
    }

private:
    EngineConfig defaults_;
    std::shared_ptr<Corpus> corpus_ = std::make_shared<Corpus>();
    mutable std::mutex mu_;
    std::map<std::string, std::unique_ptr<Engine>> engines_;
    std::string latest_dataset_;
};

} // namespace cal
