#pragma once

// JSON-over-HTTP adapter for a Workspace. Each handler maps one request onto
// one engine, corpus or metrics call.

#include "corpus.hpp"
#include "engine.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "workspace.hpp"

#include <httplib.h>
#include <json.hpp>

#include <functional>
#include <string>

namespace cal {

struct Response {
    int status = 200;
    nlohmann::json body;
    /// non-JSON payload (CSV export); used when content_type is not JSON
    std::string raw;
    std::string content_type = "application/json";
};

inline int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict:
    case ErrorCode::busy:
    case ErrorCode::precondition: return 409;
    case ErrorCode::bad_request:
    case ErrorCode::parse:
    case ErrorCode::version: return 400;
    }
    return 500;
}

/// Wire code of an error: one of not_found, conflict, bad_request, busy.
inline std::string_view api_code(ErrorCode code) {
    switch (code) {
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::busy: return "busy";
    case ErrorCode::conflict:
    case ErrorCode::precondition: return "conflict";
    case ErrorCode::bad_request:
    case ErrorCode::parse:
    case ErrorCode::version: return "bad_request";
    }
    return "bad_request";
}

inline Response json_response(int status, nlohmann::json body) {
    Response r;
    r.status = status;
    r.body = std::move(body);
    return r;
}

inline Response error_response(ErrorCode code, const std::string& message) {
    return json_response(http_status(code), {{"code", api_code(code)}, {"message", message}});
}

class Service {
public:
    explicit Service(Workspace& ws) : ws_(ws) {}

    Response create_dataset(const nlohmann::json& body) {
        return guard([&] {
            auto opts = ingest_options(body);
            auto id = body.value("dataset_id", ws_.next_dataset_id());
            Dataset ds;
            if (body.contains("content")) {
                ds = parse_dataset(body.at("content").get<std::string>(), opts, id, "upload");
            } else if (body.contains("path")) {
                ds = ingest_dataset(body.at("path").get<std::string>(), opts, id);
            } else {
                throw Error(ErrorCode::bad_request, "dataset request needs 'path' or 'content'");
            }
            return dataset_created(std::move(ds));
        });
    }

    Response upload_dataset(const std::string& content, const nlohmann::json& fields) {
        return guard([&] {
            auto opts = ingest_options(fields);
            auto id = fields.value("dataset_id", ws_.next_dataset_id());
            return dataset_created(parse_dataset(content, opts, id, fields.value("filename", "upload")));
        });
    }

    Response create_task(const nlohmann::json& body) {
        return guard([&] {
            auto name = body.at("task_name").get<std::string>();
            auto& engine = ws_.create_task(name, body.value("dataset_id", ""));
            return json_response(201, task_json(engine));
        });
    }

    Response list_tasks() {
        return guard([&] {
            auto out = nlohmann::json::array();
            for (const auto& name : ws_.task_names()) out.push_back(task_json(ws_.engine(name)));
            return json_response(200, {{"tasks", out}});
        });
    }

    Response next(const std::string& task) {
        return guard([&] {
            auto& engine = ws_.engine(task);
            auto n = engine.next_to_label();
            if (n.status == NextDoc::Status::complete) {
                return json_response(200, {{"complete", true}, {"cycle_index", n.cycle_index}});
            }
            const auto* doc = engine.dataset().find(n.doc_id);
            return json_response(200,
                            {{"complete", false},
                             {"doc_id", n.doc_id},
                             {"text", doc->text},
                             {"cycle_index", n.cycle_index},
                             {"source", n.source}});
        });
    }

    Response annotate(const std::string& task, const nlohmann::json& body) {
        return guard([&] {
            auto& engine = ws_.engine(task);
            auto label = parse_label(body.at("cls").get<std::string>());
            if (!label) throw Error(ErrorCode::bad_request, "cls must be yes or no");
            auto ack = engine.submit_label(body.at("doc_id").get<std::string>(), *label,
                                           body.value("annotator", "anonymous"));
            return json_response(200,
                            {{"labels_total", ack.labels_total},
                             {"cycle_index", ack.cycle_index},
                             {"training_in_progress", ack.training_in_progress},
                             {"superseded", ack.superseded}});
        });
    }

    Response metrics(const std::string& task) {
        return guard([&] {
            auto& engine = ws_.engine(task);
            auto history = engine.history();
            auto series = nlohmann::json::array();
            for (const auto& p : convergence_series(history)) series.push_back(to_json(p));
            auto hist = nlohmann::json::array();
            for (const auto& h : history) hist.push_back(to_json(h));
            return json_response(200, {{"report", to_json(engine.report())}, {"convergence", series}, {"history", hist}});
        });
    }

    Response export_csv(const std::string& task) {
        return guard([&] {
            Response r;
            r.raw = ws_.corpus().export_annotations(task);
            r.content_type = "text/csv; charset=utf-8";
            return r;
        });
    }

    Response retrain(const std::string& task) {
        return guard([&] {
            auto& engine = ws_.engine(task);
            engine.run_cycle();
            return json_response(202, status_json(engine.status()));
        });
    }

    Response status(const std::string& task) {
        return guard([&] { return json_response(200, status_json(ws_.engine(task).status())); });
    }

    /// Registers every route plus CORS handling on `server`.
    void mount(httplib::Server& server, const std::string& cors_origin = "*") {
        using httplib::Request;
        using httplib::Response;
        auto reply = [cors_origin](Response& res, const cal::Response& r) {
            res.status = r.status;
            res.set_header("Access-Control-Allow-Origin", cors_origin);
            if (r.content_type.rfind("application/json", 0) == 0) {
                res.set_content(r.body.dump(), r.content_type);
            } else {
                res.set_content(r.raw, r.content_type);
            }
        };
        auto json_body = [](const Request& req) {
            if (req.body.empty()) return nlohmann::json::object();
            try {
                return nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorCode::bad_request, std::string("malformed JSON body: ") + e.what());
            }
        };
        auto with_body = [json_body](const Request& req, const std::function<cal::Response(const nlohmann::json&)>& fn) {
            try {
                return fn(json_body(req));
            } catch (const Error& e) {
                return error_response(e.code(), e.what());
            }
        };

        server.Options(R"(.*)", [cors_origin](const Request&, Response& res) {
            res.status = 204;
            res.set_header("Access-Control-Allow-Origin", cors_origin);
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
        });
        server.Post("/datasets", [this, reply, with_body](const Request& req, Response& res) {
            if (req.is_multipart_form_data()) {
                if (!req.has_file("file")) {
                    reply(res, error_response(ErrorCode::bad_request, "multipart upload needs a 'file' part"));
                    return;
                }
                nlohmann::json fields = nlohmann::json::object();
                for (const auto& [name, part] : req.files) {
                    if (name != "file") fields[name] = part.content;
                }
                const auto& file = req.get_file_value("file");
                fields["filename"] = file.filename;
                reply(res, upload_dataset(file.content, fields));
                return;
            }
            reply(res, with_body(req, [this](const nlohmann::json& b) { return create_dataset(b); }));
        });
        server.Post("/tasks", [this, reply, with_body](const Request& req, Response& res) {
            reply(res, with_body(req, [this](const nlohmann::json& b) { return create_task(b); }));
        });
        server.Get("/tasks", [this, reply](const Request&, Response& res) { reply(res, list_tasks()); });
        server.Get(R"(/tasks/([^/]+)/queue/next)", [this, reply](const Request& req, Response& res) {
            reply(res, next(req.matches[1]));
        });
        server.Post(R"(/tasks/([^/]+)/annotations)", [this, reply, with_body](const Request& req, Response& res) {
            const std::string task = req.matches[1];
            reply(res, with_body(req, [this, &task](const nlohmann::json& b) { return annotate(task, b); }));
        });
        server.Get(R"(/tasks/([^/]+)/metrics)", [this, reply](const Request& req, Response& res) {
            reply(res, metrics(req.matches[1]));
        });
        server.Get(R"(/tasks/([^/]+)/export\.csv)", [this, reply](const Request& req, Response& res) {
            reply(res, export_csv(req.matches[1]));
        });
        server.Post(R"(/tasks/([^/]+)/retrain)", [this, reply](const Request& req, Response& res) {
            reply(res, retrain(req.matches[1]));
        });
        server.Get(R"(/tasks/([^/]+)/status)", [this, reply](const Request& req, Response& res) {
            reply(res, status(req.matches[1]));
        });
        server.set_error_handler([reply](const Request& req, Response& res) {
            if (res.status == 404 && res.body.empty()) {
                reply(res, error_response(ErrorCode::not_found, "no route for " + req.method + " " + req.path));
            }
        });
        server.set_exception_handler([reply](const Request&, Response& res, std::exception_ptr ep) {
            std::string what = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                what = e.what();
            } catch (...) {
            }
            reply(res, json_response(500, {{"code", "bad_request"}, {"message", what}}));
        });
    }

private:
    template <class Fn>
    Response guard(Fn&& fn) {
        try {
            return fn();
        } catch (const Error& e) {
            return error_response(e.code(), e.what());
        } catch (const nlohmann::json::exception& e) {
            return error_response(ErrorCode::bad_request, std::string("bad request body: ") + e.what());
        }
    }

    static IngestOptions ingest_options(const nlohmann::json& j) {
        IngestOptions o;
        o.format = parse_format(j.value("format", "csv"));
        o.text_column = j.value("text_column", "text");
        if (j.contains("id_column") && !j.at("id_column").get<std::string>().empty()) {
            o.id_column = j.at("id_column").get<std::string>();
        }
        if (j.contains("truth_columns")) {
            const auto& t = j.at("truth_columns");
            if (t.is_object()) {
                for (const auto& [task, col] : t.items()) o.truth_columns[task] = col.get<std::string>();
            } else {
                // "task=column,task2=column2" from form fields
                std::string spec = t.get<std::string>();
                std::size_t pos = 0;
                while (pos < spec.size()) {
                    auto comma = spec.find(',', pos);
                    auto item = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
                    auto eq = item.find('=');
                    if (eq == std::string::npos) throw Error(ErrorCode::bad_request, "truth_columns expects task=column");
                    o.truth_columns[item.substr(0, eq)] = item.substr(eq + 1);
                    pos = comma == std::string::npos ? spec.size() : comma + 1;
                }
            }
        }
        return o;
    }

    Response dataset_created(Dataset ds) {
        auto added = ws_.add_dataset(std::move(ds));
        ws_.note_latest_dataset(added->id);
        return json_response(201, {{"dataset_id", added->id}, {"documents", added->size()}});
    }

    nlohmann::json task_json(Engine& engine) {
        const auto s = engine.status();
        const auto t = ws_.corpus().task(engine.task());
        return {{"task_name", engine.task()},
                {"dataset_id", t.dataset_id},
                {"yes", s.yes_count},
                {"no", s.no_count},
                {"labels_total", s.labels_total},
                {"documents", engine.dataset().size()},
                {"cycle_index", s.cycle_index},
                {"training_in_progress", s.training_in_progress}};
    }

    static nlohmann::json status_json(const EngineStatus& s) {
        return {{"cycle_index", s.cycle_index},
                {"labels_total", s.labels_total},
                {"yes", s.yes_count},
                {"no", s.no_count},
                {"training_in_progress", s.training_in_progress},
                {"queue_depth", s.queue_depth},
                {"unlabeled", s.unlabeled},
                {"model_version", s.model_version}};
    }

    Workspace& ws_;
};

} // namespace cal
