#pragma once

#include "csv.hpp"
#include "error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cal {

enum class Label : std::uint8_t { no = 0, yes = 1 };

inline constexpr std::array<Label, 2> all_labels{Label::no, Label::yes};

inline std::string_view to_string(Label l) { return l == Label::yes ? "yes" : "no"; }

inline std::size_t index_of(Label l) { return static_cast<std::size_t>(l); }

inline Label other(Label l) { return l == Label::yes ? Label::no : Label::yes; }

inline std::optional<Label> parse_label(std::string_view s) {
    std::string v;
    for (char c : s) {
        if (c != ' ' && c != '\t') {
            v.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (v == "yes" || v == "y" || v == "true" || v == "1" || v == "t") {
        return Label::yes;
    }
    if (v == "no" || v == "n" || v == "false" || v == "0" || v == "f") {
        return Label::no;
    }
    return std::nullopt;
}

enum class Origin : std::uint8_t { manual, pre_labeled, oracle };

inline std::string_view to_string(Origin o) {
    switch (o) {
    case Origin::manual: return "manual";
    case Origin::pre_labeled: return "pre_labeled";
    case Origin::oracle: return "oracle";
    }
    return "manual";
}

inline Origin parse_origin(std::string_view s) {
    if (s == "manual") return Origin::manual;
    if (s == "pre_labeled") return Origin::pre_labeled;
    if (s == "oracle") return Origin::oracle;
    throw Error(ErrorCode::bad_request, "unknown annotation origin '" + std::string(s) + "'");
}

struct Document {
    std::string id;
    std::string text;
    /// Simulation-only ground truth, keyed by task name.
    std::map<std::string, Label> truth;
};

struct Dataset {
    std::string id;
    std::string source_uri;
    std::vector<Document> documents;

    /// Builds the id index; throws conflict on duplicate ids.
    void reindex() {
        index_.clear();
        index_.reserve(documents.size());
        for (std::size_t i = 0; i < documents.size(); ++i) {
            if (!index_.emplace(documents[i].id, i).second) {
                throw Error(ErrorCode::conflict, "duplicate document id '" + documents[i].id + "'");
            }
        }
    }

    const Document* find(std::string_view doc_id) const {
        auto it = index_.find(std::string(doc_id));
        return it == index_.end() ? nullptr : &documents[it->second];
    }

    std::optional<std::size_t> position(std::string_view doc_id) const {
        auto it = index_.find(std::string(doc_id));
        if (it == index_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::size_t size() const { return documents.size(); }

private:
    std::unordered_map<std::string, std::size_t> index_;
};

struct LabelTask {
    std::string name;
    std::string dataset_id;
    std::int64_t created_at = 0;
};

struct Annotation {
    std::string doc_id;
    std::string task;
    Label label = Label::no;
    Origin origin = Origin::manual;
    std::string annotator;
    std::int64_t timestamp = 0; // ms since epoch, strictly increasing within a corpus
};

inline nlohmann::json to_json(const Annotation& a) {
    return {{"doc_id", a.doc_id},           {"task", a.task},
            {"cls", to_string(a.label)},    {"origin", to_string(a.origin)},
            {"annotator", a.annotator},     {"timestamp", a.timestamp}};
}

inline Annotation annotation_from_json(const nlohmann::json& j) {
    Annotation a;
    a.doc_id = j.at("doc_id").get<std::string>();
    a.task = j.at("task").get<std::string>();
    auto label = parse_label(j.at("cls").get<std::string>());
    if (!label) {
        throw Error(ErrorCode::parse, "bad class in annotation record");
    }
    a.label = *label;
    a.origin = parse_origin(j.at("origin").get<std::string>());
    a.annotator = j.value("annotator", "");
    a.timestamp = j.value("timestamp", std::int64_t{0});
    return a;
}

// ---------------------------------------------------------------------------
// Ingest

enum class Format { csv, jsonl };

inline Format parse_format(std::string_view s) {
    if (s == "csv") return Format::csv;
    if (s == "jsonl" || s == "ndjson") return Format::jsonl;
    throw Error(ErrorCode::bad_request, "unknown dataset format '" + std::string(s) + "'");
}

struct IngestOptions {
    Format format = Format::csv;
    std::string text_column = "text";
    std::optional<std::string> id_column;
    /// task name -> column holding the yes/no ground truth for that task
    std::map<std::string, std::string> truth_columns;
};

namespace detail {

inline bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

inline std::string row_error(std::size_t row, std::size_t line, const std::string& what) {
    return "row " + std::to_string(row) + " (line " + std::to_string(line) + "): " + what;
}

inline std::string json_scalar(const nlohmann::json& v) {
    if (v.is_string()) {
        return v.get<std::string>();
    }
    if (v.is_boolean()) {
        return v.get<bool>() ? "yes" : "no";
    }
    if (v.is_number_integer()) {
        return std::to_string(v.get<std::int64_t>());
    }
    if (v.is_null()) {
        return {};
    }
    return v.dump();
}

} // namespace detail

/// Parses dataset content already in memory. Row numbers in errors are 0-based
/// data rows, matching the synthesized "doc-<row>" ids.
inline Dataset parse_dataset(std::string_view content, const IngestOptions& opts, std::string dataset_id,
                             std::string source_uri = {}) {
    Dataset ds;
    ds.id = std::move(dataset_id);
    ds.source_uri = std::move(source_uri);

    auto add = [&](std::size_t row, std::size_t line, std::optional<std::string> id, std::string text,
                   const std::map<std::string, std::string>& truth_raw) {
        if (detail::blank(text)) {
            throw Error(ErrorCode::parse, detail::row_error(row, line, "empty text"));
        }
        Document doc;
        if (id) {
            if (detail::blank(*id)) {
                throw Error(ErrorCode::parse, detail::row_error(row, line, "empty id"));
            }
            doc.id = std::move(*id);
        } else {
            doc.id = "doc-" + std::to_string(row);
        }
        doc.text = std::move(text);
        for (const auto& [task, raw] : truth_raw) {
            if (detail::blank(raw)) {
                continue;
            }
            auto label = parse_label(raw);
            if (!label) {
                throw Error(ErrorCode::parse,
                            detail::row_error(row, line, "truth value '" + raw + "' for task '" + task +
                                                             "' is not yes/no"));
            }
            doc.truth.emplace(task, *label);
        }
        ds.documents.push_back(std::move(doc));
    };

    if (opts.format == Format::csv) {
        auto rows = csv::parse(content);
        if (rows.empty()) {
            throw Error(ErrorCode::parse, "csv input has no header row");
        }
        const auto& header = rows.front().fields;
        auto column = [&](const std::string& name) -> std::size_t {
            auto it = std::find(header.begin(), header.end(), name);
            if (it == header.end()) {
                throw Error(ErrorCode::parse, "csv header lacks column '" + name + "'");
            }
            return static_cast<std::size_t>(it - header.begin());
        };
        const std::size_t text_col = column(opts.text_column);
        std::optional<std::size_t> id_col;
        if (opts.id_column) {
            id_col = column(*opts.id_column);
        }
        std::map<std::string, std::size_t> truth_cols;
        for (const auto& [task, col] : opts.truth_columns) {
            truth_cols[task] = column(col);
        }
        for (std::size_t r = 1; r < rows.size(); ++r) {
            const auto& row = rows[r];
            const std::size_t data_row = r - 1;
            if (row.fields.size() != header.size()) {
                throw Error(ErrorCode::parse,
                            detail::row_error(data_row, row.line,
                                              "expected " + std::to_string(header.size()) + " fields, got " +
                                                  std::to_string(row.fields.size())));
            }
            std::map<std::string, std::string> truth_raw;
            for (const auto& [task, c] : truth_cols) {
                truth_raw[task] = row.fields[c];
            }
            add(data_row, row.line,
                id_col ? std::optional<std::string>(row.fields[*id_col]) : std::nullopt,
                row.fields[text_col], truth_raw);
        }
    } else {
        std::size_t line_no = 0;
        std::size_t data_row = 0;
        std::size_t pos = 0;
        while (pos <= content.size()) {
            auto nl = content.find('\n', pos);
            auto line = content.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
            ++line_no;
            pos = nl == std::string_view::npos ? content.size() + 1 : nl + 1;
            if (detail::blank(line)) {
                continue;
            }
            nlohmann::json obj;
            try {
                obj = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorCode::parse, detail::row_error(data_row, line_no, e.what()));
            }
            if (!obj.is_object()) {
                throw Error(ErrorCode::parse, detail::row_error(data_row, line_no, "not a JSON object"));
            }
            auto text_it = obj.find(opts.text_column);
            if (text_it == obj.end() || !text_it->is_string()) {
                throw Error(ErrorCode::parse,
                            detail::row_error(data_row, line_no, "missing string field '" + opts.text_column + "'"));
            }
            std::optional<std::string> id;
            if (opts.id_column) {
                auto id_it = obj.find(*opts.id_column);
                if (id_it == obj.end()) {
                    throw Error(ErrorCode::parse,
                                detail::row_error(data_row, line_no, "missing id field '" + *opts.id_column + "'"));
                }
                id = detail::json_scalar(*id_it);
            }
            std::map<std::string, std::string> truth_raw;
            for (const auto& [task, col] : opts.truth_columns) {
                auto t = obj.find(col);
                truth_raw[task] = t == obj.end() ? std::string{} : detail::json_scalar(*t);
            }
            add(data_row, line_no, std::move(id), text_it->get<std::string>(), truth_raw);
            ++data_row;
        }
    }
    ds.reindex();
    return ds;
}

inline Dataset ingest_dataset(const std::string& path, const IngestOptions& opts, std::string dataset_id) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::not_found, "file not found: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_dataset(buf.str(), opts, std::move(dataset_id), path);
}

// ---------------------------------------------------------------------------
// Store

struct LabelCounts {
    std::size_t yes = 0;
    std::size_t no = 0;
    std::size_t total() const { return yes + no; }
};

/// Datasets, tasks and the append-only annotation log. Mutations take the
/// writer lock; readers share.
class Corpus {
public:
    Corpus() = default;
    Corpus(const Corpus&) = delete;
    Corpus& operator=(const Corpus&) = delete;

    std::shared_ptr<const Dataset> add_dataset(Dataset ds) {
        std::unique_lock lock(mu_);
        if (datasets_.count(ds.id)) {
            throw Error(ErrorCode::conflict, "dataset '" + ds.id + "' already exists");
        }
        ds.reindex();
        auto ptr = std::make_shared<const Dataset>(std::move(ds));
        datasets_.emplace(ptr->id, ptr);
        return ptr;
    }

    std::shared_ptr<const Dataset> dataset(std::string_view id) const {
        std::shared_lock lock(mu_);
        auto it = datasets_.find(std::string(id));
        if (it == datasets_.end()) {
            throw Error(ErrorCode::not_found, "unknown dataset '" + std::string(id) + "'");
        }
        return it->second;
    }

    std::vector<std::string> dataset_ids() const {
        std::shared_lock lock(mu_);
        std::vector<std::string> ids;
        for (const auto& [id, _] : datasets_) {
            ids.push_back(id);
        }
        return ids;
    }

    LabelTask create_task(std::string name, std::string dataset_id) {
        std::unique_lock lock(mu_);
        if (name.empty()) {
            throw Error(ErrorCode::bad_request, "task name must be non-empty");
        }
        if (tasks_.count(name)) {
            throw Error(ErrorCode::conflict, "task '" + name + "' already exists");
        }
        if (!datasets_.count(dataset_id)) {
            throw Error(ErrorCode::not_found, "unknown dataset '" + dataset_id + "'");
        }
        LabelTask t{std::move(name), std::move(dataset_id), next_timestamp()};
        tasks_.emplace(t.name, t);
        return t;
    }

    LabelTask task(std::string_view name) const {
        std::shared_lock lock(mu_);
        return task_locked(name);
    }

    std::vector<LabelTask> tasks() const {
        std::shared_lock lock(mu_);
        std::vector<LabelTask> out;
        for (const auto& [_, t] : tasks_) {
            out.push_back(t);
        }
        return out;
    }

    /// Appends an annotation; the latest record for a (doc, task) pair is the
    /// active one. Returns true when an earlier active record was superseded.
    bool record_annotation(Annotation a) {
        std::unique_lock lock(mu_);
        const auto& t = task_locked(a.task);
        const auto& ds = *datasets_.at(t.dataset_id);
        if (!ds.find(a.doc_id)) {
            throw Error(ErrorCode::not_found, "unknown document '" + a.doc_id + "' in dataset '" + ds.id + "'");
        }
        a.timestamp = next_timestamp();
        return append_locked(std::move(a));
    }

    std::optional<Label> active_label(std::string_view task, std::string_view doc_id) const {
        std::shared_lock lock(mu_);
        auto it = active_.find({std::string(task), std::string(doc_id)});
        if (it == active_.end()) {
            return std::nullopt;
        }
        return log_[it->second].label;
    }

    /// Active annotations of one task, ordered by doc id.
    std::vector<Annotation> active_annotations(std::string_view task) const {
        std::shared_lock lock(mu_);
        task_locked(task);
        std::vector<Annotation> out;
        for (auto it = active_.lower_bound({std::string(task), std::string()});
             it != active_.end() && it->first.first == task; ++it) {
            out.push_back(log_[it->second]);
        }
        return out;
    }

    LabelCounts label_counts(std::string_view task) const {
        std::shared_lock lock(mu_);
        LabelCounts c;
        for (auto it = active_.lower_bound({std::string(task), std::string()});
             it != active_.end() && it->first.first == task; ++it) {
            (log_[it->second].label == Label::yes ? c.yes : c.no)++;
        }
        return c;
    }

    std::vector<Annotation> log() const {
        std::shared_lock lock(mu_);
        return log_;
    }

    /// CSV with header doc_id,class,origin,annotator,timestamp; one row per
    /// active annotation, ordered by doc id.
    std::string export_annotations(std::string_view task) const {
        auto rows = active_annotations(task);
        std::string out;
        csv::append_row(out, {"doc_id", "class", "origin", "annotator", "timestamp"});
        for (const auto& a : rows) {
            const auto ts = std::to_string(a.timestamp);
            csv::append_row(out, {a.doc_id, to_string(a.label), to_string(a.origin), a.annotator, ts});
        }
        return out;
    }

    /// Replaces the log wholesale (snapshot load / journal replay) and rebuilds
    /// the active index. Validates every row before touching state.
    void restore_log(std::vector<Annotation> rows) {
        std::unique_lock lock(mu_);
        for (const auto& a : rows) {
            const auto& t = task_locked(a.task);
            if (!datasets_.at(t.dataset_id)->find(a.doc_id)) {
                throw Error(ErrorCode::not_found, "log references unknown document '" + a.doc_id + "'");
            }
        }
        log_.clear();
        active_.clear();
        for (auto& a : rows) {
            last_timestamp_ = std::max(last_timestamp_, a.timestamp);
            append_locked(std::move(a));
        }
    }

    void restore_task(LabelTask t) {
        std::unique_lock lock(mu_);
        if (!datasets_.count(t.dataset_id)) {
            throw Error(ErrorCode::not_found, "unknown dataset '" + t.dataset_id + "'");
        }
        last_timestamp_ = std::max(last_timestamp_, t.created_at);
        tasks_[t.name] = std::move(t);
    }

    /// Every subsequent annotation is also appended to `path` as one JSON line.
    void attach_journal(const std::string& path) {
        std::unique_lock lock(mu_);
        journal_ = std::make_unique<std::ofstream>(path, std::ios::app | std::ios::binary);
        if (!*journal_) {
            throw Error(ErrorCode::not_found, "cannot open journal " + path);
        }
    }

    static std::vector<Annotation> read_journal(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw Error(ErrorCode::not_found, "file not found: " + path);
        }
        std::vector<Annotation> rows;
        std::string line;
        while (std::getline(in, line)) {
            if (!detail::blank(line)) {
                rows.push_back(annotation_from_json(nlohmann::json::parse(line)));
            }
        }
        return rows;
    }

private:
    const LabelTask& task_locked(std::string_view name) const {
        auto it = tasks_.find(std::string(name));
        if (it == tasks_.end()) {
            throw Error(ErrorCode::not_found, "unknown task '" + std::string(name) + "'");
        }
        return it->second;
    }

    bool append_locked(Annotation a) {
        const std::size_t row = log_.size();
        auto key = std::make_pair(a.task, a.doc_id);
        if (journal_) {
            *journal_ << to_json(a).dump() << '\n';
            journal_->flush();
        }
        log_.push_back(std::move(a));
        auto [it, inserted] = active_.insert_or_assign(std::move(key), row);
        return !inserted;
    }

    std::int64_t next_timestamp() {
        using namespace std::chrono;
        const auto now = duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
        last_timestamp_ = std::max<std::int64_t>(now, last_timestamp_ + 1);
        return last_timestamp_;
    }

    mutable std::shared_mutex mu_;
    std::map<std::string, std::shared_ptr<const Dataset>> datasets_;
    std::map<std::string, LabelTask> tasks_;
    std::vector<Annotation> log_;
    std::map<std::pair<std::string, std::string>, std::size_t> active_;
    std::int64_t last_timestamp_ = 0;
    std::unique_ptr<std::ofstream> journal_;
};

} // namespace cal
