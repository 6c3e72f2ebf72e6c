#include <cal/service.hpp>
#include <cal/sim.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

using namespace cal;
using nlohmann::json;

namespace {

std::string csv_corpus(std::size_t n) {
    SyntheticSpec spec;
    spec.n_docs = n;
    spec.signal = 0.4;
    spec.background_words = 300;
    auto ds = make_synthetic_corpus(spec);
    std::string out = "id,text,truth\n";
    for (const auto& d : ds.documents) {
        csv::append_row(out, {d.id, d.text, to_string(d.truth.at(spec.task))});
    }
    return out;
}

EngineConfig test_defaults() {
    EngineConfig c;
    c.seed = 2;
    c.selection.k_top = 60;
    return c;
}

class LiveServer : public ::testing::Test {
protected:
    void SetUp() override {
        ws = std::make_unique<Workspace>(test_defaults());
        service = std::make_unique<Service>(*ws);
        service->mount(server, "http://ui.example");
        port = server.bind_to_any_port("127.0.0.1");
        ASSERT_GT(port, 0);
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
    }

    void TearDown() override {
        server.stop();
        thread.join();
        ws.reset();
    }

    json post(const std::string& path, const json& body, int expect) {
        auto res = client->Post(path, body.dump(), "application/json");
        EXPECT_TRUE(res);
        if (!res) return {};
        EXPECT_EQ(res->status, expect) << path << " " << res->body;
        return res->body.empty() ? json{} : json::parse(res->body);
    }

    json get(const std::string& path, int expect) {
        auto res = client->Get(path);
        EXPECT_TRUE(res);
        if (!res) return {};
        EXPECT_EQ(res->status, expect) << path << " " << res->body;
        return json::parse(res->body);
    }

    std::string ingest(std::size_t n) {
        const auto content = csv_corpus(n);
        return post("/datasets", {{"content", content}, {"id_column", "id"}, {"truth_columns", {{"t", "truth"}}}}, 201)
            .at("dataset_id");
    }

    std::unique_ptr<Workspace> ws;
    std::unique_ptr<Service> service;
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::unique_ptr<httplib::Client> client;
};

} // namespace

TEST(ServiceMapping, ErrorCodesToHttp) {
    EXPECT_EQ(http_status(ErrorCode::not_found), 404);
    EXPECT_EQ(http_status(ErrorCode::busy), 409);
    EXPECT_EQ(http_status(ErrorCode::conflict), 409);
    EXPECT_EQ(http_status(ErrorCode::parse), 400);
    EXPECT_EQ(api_code(ErrorCode::busy), "busy");
    EXPECT_EQ(api_code(ErrorCode::parse), "bad_request");
    auto r = error_response(ErrorCode::not_found, "gone");
    EXPECT_EQ(r.body.at("code"), "not_found");
    EXPECT_EQ(r.body.at("message"), "gone");
}

TEST_F(LiveServer, LabelingRoundTrip) {
    const auto ds = ingest(150);
    EXPECT_EQ(ds, "ds-1");
    auto task = post("/tasks", {{"task_name", "t"}}, 201);
    EXPECT_EQ(task.at("dataset_id"), ds);

    for (int i = 0; i < 12; ++i) {
        auto next = get("/tasks/t/queue/next", 200);
        ASSERT_FALSE(next.at("complete").get<bool>());
        EXPECT_FALSE(next.at("text").get<std::string>().empty());
        auto ack = post("/tasks/t/annotations", {{"doc_id", next.at("doc_id")}, {"cls", i % 3 ? "no" : "yes"}, {"annotator", "qa"}}, 200);
        EXPECT_EQ(ack.at("labels_total"), i + 1);
    }
    ws->engine("t").wait_idle();
    auto status = get("/tasks/t/status", 200);
    EXPECT_EQ(status.at("labels_total"), 12);
    EXPECT_GE(status.at("cycle_index").get<int>(), 1);
    for (auto key : {"training_in_progress", "queue_depth"}) EXPECT_TRUE(status.contains(key));

    auto tasks = get("/tasks", 200);
    ASSERT_EQ(tasks.at("tasks").size(), 1u);
    EXPECT_EQ(tasks.at("tasks")[0].at("yes").get<int>() + tasks.at("tasks")[0].at("no").get<int>(), 12);

    auto metrics = get("/tasks/t/metrics", 200);
    EXPECT_TRUE(metrics.at("report").contains("auc_roc"));
    EXPECT_FALSE(metrics.at("convergence").empty());

    auto csv = client->Get("/tasks/t/export.csv");
    ASSERT_TRUE(csv);
    EXPECT_EQ(csv->status, 200);
    EXPECT_EQ(csv::parse(csv->body).size(), 13u);
    EXPECT_EQ(csv->get_header_value("Access-Control-Allow-Origin"), "http://ui.example");
}

TEST_F(LiveServer, ErrorBodiesCarryOneCode) {
    ingest(60);
    post("/tasks", {{"task_name", "t"}}, 201);
    EXPECT_EQ(post("/tasks/t/annotations", {{"doc_id", "missing"}, {"cls", "yes"}}, 404).at("code"), "not_found");
    EXPECT_EQ(post("/tasks/t/annotations", {{"doc_id", "syn-00"}, {"cls", "maybe"}}, 400).at("code"), "bad_request");
    EXPECT_EQ(get("/tasks/none/status", 404).at("code"), "not_found");
    EXPECT_EQ(get("/no/such/route", 404).at("code"), "not_found");
    EXPECT_EQ(post("/tasks", {{"task_name", "t"}}, 409).at("code"), "conflict");
    EXPECT_EQ(post("/tasks/t/retrain", json::object(), 409).at("code"), "conflict"); // below the label minimum
    auto bad = client->Post("/tasks", "{not json", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    EXPECT_EQ(post("/datasets", {{"path", "/nonexistent/file.csv"}}, 404).at("code"), "not_found");
}

TEST_F(LiveServer, RetrainWhileBusyIs409Busy) {
    ingest(2000);
    post("/tasks", {{"task_name", "t"}}, 201);
    for (int i = 0; i < 9; ++i) {
        auto next = get("/tasks/t/queue/next", 200);
        post("/tasks/t/annotations", {{"doc_id", next.at("doc_id")}, {"cls", i % 2 ? "yes" : "no"}}, 200);
    }
    auto next = get("/tasks/t/queue/next", 200);
    auto ack = post("/tasks/t/annotations", {{"doc_id", next.at("doc_id")}, {"cls", "yes"}}, 200);
    ASSERT_TRUE(ack.at("training_in_progress").get<bool>());
    auto res = client->Post("/tasks/t/retrain", "{}", "application/json");
    ASSERT_TRUE(res);
    if (res->status == 409) {
        EXPECT_EQ(json::parse(res->body).at("code"), "busy");
    } else {
        // the first cycle finished before the request arrived
        EXPECT_EQ(res->status, 202);
    }
    ws->engine("t").wait_idle();
}

TEST_F(LiveServer, CompletionPayloadOnceEverythingIsLabeled) {
    ingest(15);
    post("/tasks", {{"task_name", "t"}}, 201);
    for (int i = 0; i < 15; ++i) {
        auto next = get("/tasks/t/queue/next", 200);
        ASSERT_FALSE(next.at("complete").get<bool>());
        post("/tasks/t/annotations", {{"doc_id", next.at("doc_id")}, {"cls", i % 2 ? "yes" : "no"}}, 200);
    }
    EXPECT_TRUE(get("/tasks/t/queue/next", 200).at("complete").get<bool>());
    ws->engine("t").wait_idle();
}

TEST_F(LiveServer, RepeatedIdenticalAnnotationsAreIdempotent) {
    ingest(40);
    post("/tasks", {{"task_name", "t"}}, 201);
    auto next = get("/tasks/t/queue/next", 200);
    json body{{"doc_id", next.at("doc_id")}, {"cls", "yes"}, {"annotator", "qa"}};
    post("/tasks/t/annotations", body, 200);
    const auto first = ws->corpus().export_annotations("t");
    auto again = post("/tasks/t/annotations", body, 200);
    EXPECT_EQ(again.at("labels_total"), 1);
    auto rows_a = csv::parse(first), rows_b = csv::parse(ws->corpus().export_annotations("t"));
    ASSERT_EQ(rows_a.size(), rows_b.size());
    for (std::size_t i = 0; i < rows_a.size(); ++i) {
        // timestamps advance; the active label does not
        EXPECT_EQ(rows_a[i].fields[0], rows_b[i].fields[0]);
        EXPECT_EQ(rows_a[i].fields[1], rows_b[i].fields[1]);
    }
}

TEST_F(LiveServer, PreflightAndMultipartUpload) {
    auto pre = client->Options("/tasks");
    ASSERT_TRUE(pre);
    EXPECT_EQ(pre->status, 204);
    EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Origin"), "http://ui.example");
    EXPECT_NE(pre->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);

    httplib::MultipartFormDataItems items{{"file", "text\nfirst doc\nsecond doc\n", "docs.csv", "text/csv"},
                                          {"dataset_id", "uploaded", "", ""}};
    auto res = client->Post("/datasets", items);
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 201) << res->body;
    EXPECT_EQ(json::parse(res->body).at("dataset_id"), "uploaded");
    EXPECT_EQ(ws->corpus().dataset("uploaded")->size(), 2u);
}
