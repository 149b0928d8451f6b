#include <doctest.h>

#include <fstream>
#include <random>

#include "bindwatch/feedback_store.hpp"
#include "support/oracles.hpp"
#include "support/random_store.hpp"

using namespace bindwatch;
using namespace testsupport;

namespace {

DomainName dn(std::string_view s) { return canonicalize_domain(s); }
IpAddr ip(std::string_view s) { return IpAddr::parse(s); }

PossibilityState state(std::string_view addr, std::string_view domain, double p, const PipelineConfig& cfg) {
    auto st = new_state({ip(addr), dn(domain)}, 1700006400.0);
    st.p = p;
    st.status = status_for(p, cfg);
    st.last_seen_day = day_index(1700006400.0);
    return st;
}

struct FakeClock {
    double now = 1700006400.0;
    Clock clock() {
        return [this] { return now; };
    }
};

}  // namespace

TEST_SUITE("feedback_store") {

TEST_CASE("watchlist") {
    Store store(PipelineConfig{});
    auto r = store.add_user_string(make_specific_string(SpecKind::domain, "example.com", SpecSource::user));
    CHECK(r.created);
    CHECK(r.entry.spec.source == SpecSource::user);
    auto again = store.add_user_string(make_specific_string(SpecKind::domain, "EXAMPLE.com", SpecSource::user));
    CHECK_FALSE(again.created);
    CHECK(store.watchlist().size() == 1);
    CHECK_THROWS_AS(make_specific_string(SpecKind::regex, "(", SpecSource::user), InvalidSpec);
    CHECK(store.remove_watch(r.entry.spec));
    CHECK_FALSE(store.remove_watch(r.entry.spec));
    CHECK(store.watchlist().empty());
}

TEST_CASE("auto IP strings") {
    PipelineConfig cfg;
    Store store(cfg);
    store.upsert_candidate(state("203.0.113.7", "www.example.com", 0.95, cfg));
    store.upsert_candidate(state("203.0.113.8", "www.example.com", 0.50, cfg));
    store.upsert_candidate(state("203.0.113.9", "a.example.com", 0.95, cfg));
    store.upsert_candidate(state("203.0.113.9", "b.example.com", 0.99, cfg));
    auto created = store.auto_generate_ip_strings();
    REQUIRE(created.size() == 2);
    std::set<std::string> values;
    for (const auto& e : store.watchlist()) {
        CHECK(e.spec.kind == SpecKind::ip);
        CHECK(e.spec.source == SpecSource::automatic);
        values.insert(e.spec.value);
    }
    CHECK(values == std::set<std::string>{"203.0.113.7", "203.0.113.9"});
    CHECK(store.auto_generate_ip_strings().empty());
}

TEST_CASE("auto entries age out after quiet days") {
    PipelineConfig cfg;
    Store store(cfg);
    std::int64_t day0 = day_index(1700006400.0);
    store.rollover_to(day0);
    store.upsert_candidate(state("203.0.113.7", "www.example.com", 0.95, cfg));
    CHECK(store.auto_generate_ip_strings().size() == 1);
    store.rollover_to(day0 + 2);  // 0.97 then 0.92, still above t2
    CHECK(store.watchlist().size() == 1);
    store.rollover_to(day0 + 1 + kAutoEntryQuietDays);
    CHECK(store.watchlist().size() == 1);
    store.rollover_to(day0 + 2 + kAutoEntryQuietDays);
    CHECK(store.watchlist().empty());
}

TEST_CASE("candidates") {
    PipelineConfig cfg;
    Store store(cfg);
    auto st = state("203.0.113.7", "www.example.com", 0.95, cfg);
    store.upsert_candidate(st);
    CHECK(store.get_candidate(st.key) == st);
    CHECK_THROWS_AS(store.get_candidate({ip("192.0.2.1"), dn("x.org")}), NotFound);
    store.upsert_candidate(state("203.0.113.8", "www.example.com", 0.5, cfg));
    CandidateFilter f;
    f.min_p = 0.9;
    CHECK(store.list_candidates(f).size() == 1);
    f = {};
    f.domain = dn("example.com");
    CHECK(store.list_candidates(f).size() == 2);
    f.status = Status::Hold;
    CHECK(store.list_candidates(f).size() == 1);
}

TEST_CASE("publish list rules") {
    PipelineConfig cfg;
    FakeClock clk;
    Store store(cfg, clk.clock());
    Verdict v{{ip("203.0.113.7"), dn("www.example.com")}, VerdictValue::Correct, VerdictSource::automatic, clk.now,
              clk.now + cfg.verdict_ttl_secs};
    store.apply_verdict(v);
    store.upsert_candidate(state("203.0.113.8", "www.example.com", 0.99, cfg));
    store.upsert_candidate(state("203.0.113.9", "www.example.com", 0.5, cfg));
    store.upsert_candidate(state("203.0.113.10", "www.example.com", 0.95, cfg));

    auto list = store.publish_list(clk.now + 10);
    REQUIRE(list.size() == 2);
    CHECK(list[0].key.ip == ip("203.0.113.7"));
    CHECK(list[0].status == Status::Verified);
    CHECK(list[0].valid_until == clk.now + cfg.verdict_ttl_secs);
    CHECK(list[1].status == Status::Published);
    CHECK_FALSE(list[1].valid_until);

    auto later = store.publish_list(clk.now + cfg.verdict_ttl_secs + 1);
    REQUIRE(later.size() == 1);
    CHECK(later[0].key.ip == ip("203.0.113.8"));

    for (const auto& e : store.publish_list(clk.now)) {
        auto st = store.get_candidate(e.key);
        CHECK((st.p >= cfg.t1 || st.status == Status::Verified));
    }
    CHECK(published_to_json_line(list[1]) ==
          R"({"domain":"www.example.com","ip":"203.0.113.8","possibility":0.99,"status":"published","valid_until":null})");
}

TEST_CASE("verdicts and review") {
    PipelineConfig cfg;
    FakeClock clk;
    Store store(cfg, clk.clock());
    CandidateKey k{ip("203.0.113.7"), dn("www.example.com")};
    store.upsert_candidate(state("203.0.113.7", "www.example.com", 0.95, cfg));
    auto item = store.enqueue_review(k, "<html>page</html>", 9);
    auto dup = store.enqueue_review(k, "<html>other</html>", 7);
    CHECK(dup.id == item.id);
    CHECK(store.pending_reviews().size() == 1);

    auto st = store.apply_human_verdict(item.id, VerdictValue::Correct);
    CHECK(st.status == Status::Verified);
    CHECK(st.verified_until);
    CHECK(store.publish_list().size() == 1);
    CHECK(store.last_verdict(k)->source == VerdictSource::human);
    CHECK_THROWS_AS(store.apply_human_verdict(item.id, VerdictValue::Correct), AlreadyResolved);
    CHECK_THROWS_AS(store.apply_human_verdict("r-999", VerdictValue::Correct), NotFound);

    CandidateKey k2{ip("203.0.113.8"), dn("www.example.com")};
    auto item2 = store.enqueue_review(k2, "x", std::nullopt);
    CHECK_THROWS_AS(store.apply_human_verdict(item2.id, VerdictValue::Uncertain), InvalidVerdict);
    auto st2 = store.apply_human_verdict(item2.id, VerdictValue::Incorrect);
    CHECK(st2.status == Status::Rejected);
    CHECK(st2.p == 0.0);
    CHECK(store.get_review(item2.id).state == ReviewState::resolved);

    auto long_page = std::string(10000, 'a');
    auto item3 = store.enqueue_review({ip("203.0.113.9"), dn("x.example.com")}, long_page, 1);
    CHECK(item3.page_excerpt.size() == kPageExcerptBytes);
}

TEST_CASE("references") {
    Store store(PipelineConfig{});
    ReferenceFingerprint r1{dn("example.com"), Fingerprint{1}, kFingerprintVersion, 1.0};
    store.put_pending_reference(r1);
    CHECK_FALSE(store.reference_for(dn("www.example.com")));
    store.confirm_reference(dn("example.com"));
    CHECK(store.reference_for(dn("www.example.com")) == Fingerprint{1});

    ReferenceFingerprint r2{dn("example.com"), Fingerprint{2}, kFingerprintVersion, 2.0};
    store.put_pending_reference(r2);
    CHECK(store.reference_for(dn("example.com")) == Fingerprint{1});
    store.confirm_reference(dn("example.com"));
    CHECK(store.reference_for(dn("example.com")) == Fingerprint{2});
    CHECK_THROWS_AS(store.confirm_reference(dn("example.com")), NotFound);
    CHECK_THROWS_AS(store.confirm_reference(dn("other.org")), NotFound);

    ReferenceFingerprint stale{dn("old.org"), Fingerprint{3}, kFingerprintVersion + 1, 3.0};
    store.put_pending_reference(stale);
    store.confirm_reference(dn("old.org"));
    CHECK_FALSE(store.reference_for(dn("old.org")));
}

TEST_CASE("snapshot round-trip and corruption") {
    TempDir dir;
    std::mt19937_64 rng(17);
    for (int i = 0; i < 20; ++i) {
        Store store(PipelineConfig{});
        drive_random_store(store, rng, 80);
        auto path = dir.path / ("snap" + std::to_string(i) + ".json");
        store.snapshot(path);
        Store copy(PipelineConfig{});
        copy.restore(path);
        CHECK(copy.state() == store.state());
        CHECK(snapshot_from_json(snapshot_to_json(store.state())) == store.state());
    }

    Store store(PipelineConfig{});
    drive_random_store(store, rng, 50);
    auto path = dir.path / "snap.json";
    store.snapshot(path);
    std::string text;
    {
        std::ifstream in(path);
        text.assign(std::istreambuf_iterator<char>(in), {});
    }
    {
        std::ofstream out(dir.path / "trunc.json");
        out << text.substr(0, text.size() / 2);
    }
    CHECK_THROWS_AS(Store(PipelineConfig{}).restore(dir.path / "trunc.json"), CorruptSnapshot);

    auto snap = store.state();
    snap.schema_version = kSchemaVersion + 1;
    {
        std::ofstream out(dir.path / "future.json");
        out << snapshot_to_json(snap);
    }
    CHECK_THROWS_AS(Store(PipelineConfig{}).restore(dir.path / "future.json"), SchemaMismatch);
}

TEST_CASE("journal replay survives a torn tail") {
    TempDir dir;
    std::mt19937_64 rng(23);
    StoreSnapshot acknowledged;
    {
        auto store = Store::open(dir.path, PipelineConfig{});
        drive_random_store(*store, rng, 120);
        store->flush();
        acknowledged = store->state();
    }
    {
        std::ofstream out(dir.path / "journal.jsonl", std::ios::app);
        out << R"({"op":"upsert_candidate","ts":1,"data":{"ip":"203.0)";
    }
    auto reopened = Store::open(dir.path, PipelineConfig{});
    CHECK(reopened->state() == acknowledged);

    // Checkpoint then more writes, then reopen again.
    reopened->checkpoint();
    drive_random_store(*reopened, rng, 40);
    reopened->flush();
    auto expected = reopened->state();
    reopened.reset();
    CHECK(Store::open(dir.path, PipelineConfig{})->state() == expected);
}

TEST_CASE("rollover drives daily updates") {
    PipelineConfig cfg;
    Store store(cfg);
    std::int64_t d = day_index(1700006400.0);
    store.rollover_to(d);
    auto st = state("203.0.113.7", "www.example.com", 0.5, cfg);
    st.last_seen_day = d;
    store.upsert_candidate(st);
    store.rollover_to(d + 1);  // seen on day d
    CHECK(store.get_candidate(st.key).p == doctest::Approx(0.52));
    store.rollover_to(d + 3);  // two unseen days
    CHECK(store.get_candidate(st.key).p == doctest::Approx(0.42));
    CHECK(store.current_day() == d + 3);
}

}
