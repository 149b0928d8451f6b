#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include <httplib.h>
#include <json.hpp>

#include "bindwatch/service_api.hpp"
#include "support/oracles.hpp"

using namespace bindwatch;
using nlohmann::json;

namespace {

DomainName dn(std::string_view s) { return canonicalize_domain(s); }
IpAddr ip(std::string_view s) { return IpAddr::parse(s); }

constexpr double kNow = 1700006400.0;

PipelineConfig with_token() {
    PipelineConfig cfg;
    cfg.api_token = "s3cret";
    return cfg;
}

PossibilityState state(std::string_view addr, std::string_view domain, double p) {
    PipelineConfig cfg;
    auto st = new_state({ip(addr), dn(domain)}, kNow - 600);
    st.p = p;
    st.status = status_for(p, cfg);
    st.last_seen_day = day_index(kNow);
    st.sightings = 2;
    st.protocols = 0b101;
    return st;
}

ApiRequest get(std::string path, std::map<std::string, std::string> query = {}) {
    return ApiRequest{"GET", std::move(path), std::move(query), "", ""};
}

ApiRequest post(std::string path, std::string body, std::string auth = "Bearer s3cret") {
    return ApiRequest{"POST", std::move(path), {}, std::move(body), std::move(auth)};
}

// Fills a store with one of everything the endpoints show.
void seed(Store& store) {
    store.upsert_candidate(state("203.0.113.7", "www.example.com", 0.99));
    store.upsert_candidate(state("203.0.113.8", "www.example.com", 0.95));
    store.upsert_candidate(state("198.51.100.3", "mail.example.org", 0.40));
    store.apply_verdict(Verdict{{ip("203.0.113.9"), dn("www.example.com")}, VerdictValue::Correct,
                                VerdictSource::automatic, kNow, kNow + 86400});
    store.enqueue_review({ip("203.0.113.8"), dn("www.example.com")}, "<html>landing \xff page</html>", 9);
    StoreCounters c;
    c.events_ingested = 1000;
    c.hits = 40;
    c.filtered_cdn = 7;
    c.filtered_url = 3;
    store.add_counters(c);
}

void check_golden(const std::string& name, const std::string& body) {
    std::string path = std::string(GOLDEN_DIR) + "/" + name + ".json";
    if (std::getenv("BINDWATCH_UPDATE_GOLDEN")) {
        std::ofstream(path) << body << "\n";
    }
    std::ifstream in(path);
    REQUIRE_MESSAGE(in, ("missing golden file " + path));
    std::string expected((std::istreambuf_iterator<char>(in)), {});
    if (!expected.empty() && expected.back() == '\n') expected.pop_back();
    CHECK_MESSAGE(body == expected, name);
}

}  // namespace

TEST_SUITE("service_api") {

TEST_CASE("golden responses") {
    Store store(with_token(), [] { return kNow; });
    seed(store);
    ApiService api(store);

    auto pairs = api.handle(get("/api/pairs"));
    CHECK(pairs.status == 200);
    check_golden("pairs", pairs.body);
    auto verified = api.handle(get("/api/pairs/verified"));
    CHECK(verified.status == 200);
    check_golden("pairs_verified", verified.body);
    auto queue = api.handle(get("/api/review/queue"));
    check_golden("review_queue", queue.body);
    auto stats = api.handle(get("/api/stats"));
    check_golden("stats", stats.body);
    auto missing = api.handle(post("/api/review/r-404/verdict", R"({"verdict":"correct"})"));
    CHECK(missing.status == 404);
    check_golden("error_not_found", missing.body);
}

TEST_CASE("verified list") {
    Store store(with_token(), [] { return kNow; });
    ApiService api(store);
    CHECK(api.handle(get("/api/pairs/verified")).body == "[]");
    store.apply_verdict(Verdict{{ip("203.0.113.9"), dn("www.example.com")}, VerdictValue::Correct,
                                VerdictSource::human, kNow, kNow + 86400});
    auto j = json::parse(api.handle(get("/api/pairs/verified")).body);
    REQUIRE(j.size() == 1);
    CHECK(j[0]["status"] == "verified");
    CHECK(j[0]["ip"] == "203.0.113.9");
}

TEST_CASE("pairs filters and pagination") {
    Store store(with_token(), [] { return kNow; });
    for (int i = 0; i < 450; ++i) {
        auto addr = "10." + std::to_string(i / 250) + "." + std::to_string(i % 250) + ".1";
        store.upsert_candidate(state(addr, "www.example.com", i % 2 ? 0.95 : 0.5));
    }
    store.upsert_candidate(state("10.9.9.9", "other.org", 0.99));
    ApiService api(store);

    std::set<std::string> seen;
    std::string cursor;
    int pages = 0;
    for (;;) {
        std::map<std::string, std::string> q{{"domain", "example.com"}};
        if (!cursor.empty()) q["cursor"] = cursor;
        auto j = json::parse(api.handle(get("/api/pairs", q)).body);
        CHECK(j["items"].size() <= kPageSize);
        for (const auto& it : j["items"]) CHECK(seen.insert(it["ip"].get<std::string>()).second);
        ++pages;
        if (j["next_cursor"].is_null()) break;
        cursor = j["next_cursor"];
    }
    CHECK(pages == 3);
    CHECK(seen.size() == 450);

    auto rec = json::parse(api.handle(get("/api/pairs", {{"status", "recommended"}})).body);
    CHECK(rec["items"].size() == 200);
    auto high = json::parse(api.handle(get("/api/pairs", {{"min_possibility", "0.98"}})).body);
    REQUIRE(high["items"].size() == 1);
    CHECK(high["items"][0]["domain"] == "other.org");

    CHECK(api.handle(get("/api/pairs", {{"status", "bogus"}})).status == 400);
    CHECK(api.handle(get("/api/pairs", {{"min_possibility", "2"}})).status == 400);
    CHECK(api.handle(get("/api/pairs", {{"cursor", "!!!"}})).status == 400);
    CHECK(api.handle(get("/api/nothing")).status == 404);
}

TEST_CASE("watchlist mutations need the token") {
    Store store(with_token(), [] { return kNow; });
    ApiService api(store);
    auto body = R"({"kind":"domain","value":"Example.com"})";
    CHECK(api.handle(post("/api/watchlist", body, "")).status == 401);
    CHECK(api.handle(post("/api/watchlist", body, "Bearer wrong")).status == 401);
    auto first = api.handle(post("/api/watchlist", body));
    CHECK(first.status == 201);
    auto j = json::parse(first.body);
    CHECK(j["value"] == "example.com");
    CHECK(j["source"] == "user");
    CHECK(j["created"] == true);
    auto again = api.handle(post("/api/watchlist", body));
    CHECK(again.status == 200);
    CHECK(json::parse(again.body)["created"] == false);
    CHECK(store.watchlist().size() == 1);

    CHECK(api.handle(post("/api/watchlist", R"({"kind":"regex","value":"("})")).status == 400);
    CHECK(api.handle(post("/api/watchlist", R"({"kind":"asn","value":"1"})")).status == 400);
    CHECK(api.handle(post("/api/watchlist", "not json")).status == 400);

    Store open_store(PipelineConfig{}, [] { return kNow; });
    ApiService no_token(open_store);
    CHECK(no_token.handle(post("/api/watchlist", body, "Bearer ")).status == 401);
}

TEST_CASE("review verdicts") {
    Store store(with_token(), [] { return kNow; });
    seed(store);
    ApiService api(store);
    auto queue = json::parse(api.handle(get("/api/review/queue")).body);
    REQUIRE(queue.size() == 1);
    std::string id = queue[0]["id"];
    std::string path = "/api/review/" + id + "/verdict";

    CHECK(api.handle(post(path, R"({"verdict":"maybe"})")).status == 400);
    auto done = api.handle(post(path, R"({"verdict":"correct"})"));
    CHECK(done.status == 200);
    CHECK(json::parse(done.body)["status"] == "verified");
    auto replay = api.handle(post(path, R"({"verdict":"correct"})"));
    CHECK(replay.status == 409);
    CHECK(json::parse(replay.body)["error"]["code"] == "conflict");
    CHECK(json::parse(api.handle(get("/api/review/queue")).body).empty());
    CHECK(json::parse(api.handle(get("/api/stats")).body)["verified"] == 2);
}

TEST_CASE("listen addresses") {
    CHECK(parse_listen_addr("127.0.0.1:8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
    CHECK(parse_listen_addr(":9000") == std::pair<std::string, int>{"0.0.0.0", 9000});
    CHECK(parse_listen_addr("[::1]:80") == std::pair<std::string, int>{"::1", 80});
    CHECK_THROWS_AS(parse_listen_addr("localhost"), ConfigInvalid);
    CHECK_THROWS_AS(parse_listen_addr("h:99999"), ConfigInvalid);
}

TEST_CASE("real server over loopback") {
    testsupport::TempDir dir;
    auto store = Store::open(dir.path, with_token());
    store->set_auto_flush(true);
    ApiServer server(*store, "127.0.0.1", 0);
    httplib::Client client("127.0.0.1", server.port());
    auto stats = client.Get("/api/stats");
    REQUIRE(stats);
    CHECK(stats->status == 200);
    CHECK(stats->get_header_value("Content-Type") == "application/json");

    httplib::Headers auth{{"Authorization", "Bearer s3cret"}};
    auto created = client.Post("/api/watchlist", auth, R"({"kind":"ip","value":"203.0.113.7"})", "application/json");
    REQUIRE(created);
    CHECK(created->status == 201);
    auto missing = client.Post("/api/review/r-1/verdict", auth, R"({"verdict":"correct"})", "application/json");
    REQUIRE(missing);
    CHECK(missing->status == 404);

    CHECK_THROWS_AS(ApiServer(*store, "127.0.0.1", server.port()), BindFailure);
    server.stop();
    server.wait();

    // Acknowledged writes are durable.
    store.reset();
    CHECK(Store::open(dir.path, with_token())->watchlist().size() == 1);
}

}
