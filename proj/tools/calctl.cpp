// calctl: command-line front end for the active-learning engine.

#include <cal/cal.hpp>
#include <cal/service.hpp>

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <thread>

namespace {

std::unique_ptr<cal::Workspace> open_state(const std::string& state, const cal::EngineConfig& defaults) {
    if (!state.empty() && std::filesystem::exists(state)) return cal::Workspace::load(state);
    return std::make_unique<cal::Workspace>(defaults);
}

void write_file(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw cal::Error(cal::ErrorCode::bad_request, "cannot write " + path);
    out << content;
}

cal::IngestOptions ingest_options(const std::string& format, const std::string& text_col, const std::string& id_col,
                                  const std::vector<std::string>& truth) {
    cal::IngestOptions o;
    o.format = cal::parse_format(format);
    o.text_column = text_col;
    if (!id_col.empty()) o.id_column = id_col;
    for (const auto& t : truth) {
        auto eq = t.find('=');
        if (eq == std::string::npos) throw cal::Error(cal::ErrorCode::bad_request, "--truth-col expects task=column");
        o.truth_columns[t.substr(0, eq)] = t.substr(eq + 1);
    }
    return o;
}

// Server-only keys are pulled out before the rest is read as engine settings.
struct ServeSettings {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string cors_origin = "*";
    std::string static_dir;
    std::string state;
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"calctl - conformal active learning for text labeling"};
    app.require_subcommand(1);

    std::string state;
    auto add_state = [&](CLI::App* cmd) {
        cmd->add_option("--state", state, "workspace snapshot file (read, then rewritten)");
    };

    // ingest
    auto* ingest = app.add_subcommand("ingest", "add a CSV or JSONL dataset to the workspace");
    std::string ingest_file, format = "csv", text_col = "text", id_col, dataset_id;
    std::vector<std::string> truth_cols;
    ingest->add_option("file", ingest_file, "dataset file")->required();
    ingest->add_option("--format", format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));
    ingest->add_option("--text-col", text_col, "text column");
    ingest->add_option("--id-col", id_col, "document id column");
    ingest->add_option("--truth-col", truth_cols, "ground truth as task=column (repeatable)");
    ingest->add_option("--dataset-id", dataset_id, "dataset id (default ds-<n>)");
    add_state(ingest);

    // task create
    auto* task = app.add_subcommand("task", "manage label tasks");
    task->require_subcommand(1);
    auto* task_create = task->add_subcommand("create", "create a task over a dataset");
    std::string task_name, task_dataset, task_config;
    task_create->add_option("name", task_name)->required();
    task_create->add_option("--dataset", task_dataset, "dataset id (default: latest)");
    task_create->add_option("--config", task_config, "engine settings file");
    add_state(task_create);

    // serve
    auto* serve = app.add_subcommand("serve", "run the HTTP service");
    std::string serve_config, host;
    int port = -1;
    std::string static_dir, cors;
    serve->add_option("--config", serve_config, "settings file");
    serve->add_option("--port", port, "port; 0 picks a free one (env CAL_PORT)")->check(CLI::Range(0, 65535));
    serve->add_option("--host", host, "bind address (default 127.0.0.1)");
    serve->add_option("--static-dir", static_dir, "serve UI assets from this directory");
    serve->add_option("--cors-origin", cors, "Access-Control-Allow-Origin value");
    add_state(serve);

    // simulate
    auto* sim = app.add_subcommand("simulate", "run a seeded labeling experiment against ground truth");
    std::string sim_config, sim_out;
    bool sim_table = false;
    sim->add_option("--config", sim_config, "experiment settings file")->required();
    sim->add_option("--out", sim_out, "report JSON path (- for stdout)")->required();
    sim->add_flag("--table", sim_table, "print a summary table");

    // export
    auto* exp = app.add_subcommand("export", "write the active annotations of a task as CSV");
    std::string export_task, export_out = "-";
    exp->add_option("task", export_task)->required();
    exp->add_option("--out", export_out, "CSV path (- for stdout)");
    add_state(exp);

    // bootstrap-keywords
    auto* boot = app.add_subcommand("bootstrap-keywords", "seed a task queue with keyword matches");
    std::string boot_task;
    std::vector<std::string> terms;
    boot->add_option("task", boot_task)->required();
    boot->add_option("--terms", terms, "keywords (comma separated or repeated)")->required()->delimiter(',');
    add_state(boot);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*ingest) {
            auto ws = open_state(state, {});
            auto opts = ingest_options(format, text_col, id_col, truth_cols);
            auto id = dataset_id.empty() ? ws->next_dataset_id() : dataset_id;
            auto ds = ws->add_dataset(cal::ingest_dataset(ingest_file, opts, id));
            ws->note_latest_dataset(ds->id);
            if (!state.empty()) ws->save(state);
            std::cout << ds->id << " " << ds->size() << " documents\n";
            return 0;
        }

        if (*task_create) {
            auto ws = open_state(state, {});
            std::optional<cal::EngineConfig> cfg;
            if (!task_config.empty()) cfg = cal::engine_config_from(cal::read_key_values(task_config), ws->defaults());
            auto& engine = ws->create_task(task_name, task_dataset, cfg);
            if (!state.empty()) ws->save(state);
            std::cout << engine.task() << " over " << engine.dataset().id << " (" << engine.dataset().size()
                      << " documents)\n";
            return 0;
        }

        if (*boot) {
            if (state.empty()) throw cal::Error(cal::ErrorCode::bad_request, "--state is required");
            auto ws = cal::Workspace::load(state);
            auto r = ws->engine(boot_task).bootstrap(cal::BootstrapKeyword{terms});
            if (r.warning) std::cerr << "warning: " << *r.warning << "\n";
            ws->save(state);
            std::cout << r.keyword_matches << " keyword matches, queue " << r.queue_size << "\n";
            return 0;
        }

        if (*exp) {
            if (state.empty()) throw cal::Error(cal::ErrorCode::bad_request, "--state is required");
            auto ws = cal::Workspace::load(state);
            ws->corpus().task(export_task);
            write_file(export_out, ws->corpus().export_annotations(export_task));
            return 0;
        }

        if (*sim) {
            auto cfg = cal::experiment_config_from(cal::read_key_values(sim_config));
            auto ds = cal::detail::load_corpus(cfg);
            auto active = cal::run_experiment(cfg, ds);
            nlohmann::json out{{"active", cal::to_json(active)}};
            std::optional<cal::ExperimentReport> baseline;
            if (cfg.baseline) {
                baseline = cal::run_random_baseline(cfg, ds);
                out["baseline"] = cal::to_json(*baseline);
            }
            write_file(sim_out, out.dump(2) + "\n");
            if (sim_table) {
                std::cout << cal::to_table(active);
                if (baseline) std::cout << cal::to_table(*baseline);
            }
            return 0;
        }

        if (*serve) {
            ServeSettings s;
            cal::KeyValues engine_kv;
            if (!serve_config.empty()) {
                for (auto& [k, v] : cal::read_key_values(serve_config)) {
                    if (k == "host") s.host = v;
                    else if (k == "port") s.port = static_cast<int>(cal::detail::to_uint(k, v));
                    else if (k == "cors_origin") s.cors_origin = v;
                    else if (k == "static_dir") s.static_dir = v;
                    else if (k == "state") s.state = v;
                    else engine_kv[k] = v;
                }
            }
            if (const char* env = std::getenv("CAL_PORT"); env && *env) {
                s.port = static_cast<int>(cal::detail::to_uint("CAL_PORT", env));
            }
            if (port >= 0) s.port = port;
            if (!host.empty()) s.host = host;
            if (!cors.empty()) s.cors_origin = cors;
            if (!static_dir.empty()) s.static_dir = static_dir;
            if (!state.empty()) s.state = state;

            auto defaults = cal::engine_config_from(engine_kv);
            auto ws = open_state(s.state, defaults);

            // Signals go to a dedicated thread so shutdown can save state.
            sigset_t signals;
            sigemptyset(&signals);
            sigaddset(&signals, SIGINT);
            sigaddset(&signals, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &signals, nullptr);

            httplib::Server server;
            cal::Service service(*ws);
            service.mount(server, s.cors_origin);
            if (!s.static_dir.empty() && !server.set_mount_point("/ui", s.static_dir)) {
                throw cal::Error(cal::ErrorCode::not_found, "static directory not found: " + s.static_dir);
            }

            int bound = s.port;
            if (s.port == 0) {
                bound = server.bind_to_any_port(s.host);
            } else if (!server.bind_to_port(s.host, s.port)) {
                bound = -1;
            }
            if (bound < 0) {
                throw cal::Error(cal::ErrorCode::conflict,
                                 "cannot bind " + s.host + ":" + std::to_string(s.port));
            }
            std::cout << "listening on http://" << s.host << ":" << bound << std::endl;

            std::thread waiter([&] {
                int sig = 0;
                sigwait(&signals, &sig);
                server.stop();
            });
            server.listen_after_bind();
            if (waiter.joinable()) {
                // listen can also end on its own; wake the waiter so it exits
                pthread_kill(waiter.native_handle(), SIGTERM);
                waiter.join();
            }
            if (!s.state.empty()) {
                ws->save(s.state);
                std::cout << "state saved to " << s.state << std::endl;
            }
            return 0;
        }
    } catch (const cal::Error& e) {
        std::cerr << "error [" << cal::api_code(e.code()) << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
