#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "bindwatch/possibility.hpp"
#include "support/oracles.hpp"

using namespace bindwatch;
using testsupport::union_bruteforce;

namespace {

CandidateKey key() { return {IpAddr::parse("203.0.113.7"), canonicalize_domain("www.example.com")}; }

MatchHit hit(Proto proto, double ts, std::optional<int> dist = std::nullopt) {
    MatchHit h;
    h.key = key();
    h.proto = proto;
    h.ts = ts;
    if (proto == Proto::http) {
        h.http = HttpDetail{"/", 200, "x"};
        h.fp_dist = dist;
    }
    return h;
}

EvidenceSet evidence(bool ssl, bool dns, bool http, std::optional<double> sim = std::nullopt) {
    EvidenceSet e;
    e.key = key();
    e.ssl_seen = ssl;
    e.dns_seen = dns;
    e.http_seen = http;
    e.sim = sim;
    if (sim) e.best_dist = static_cast<int>(std::lround((1.0 - *sim) * 64));
    return e;
}

}  // namespace

TEST_SUITE("possibility") {

TEST_CASE("or_combine examples") {
    CHECK(or_combine({}) == 0.0);
    CHECK(or_combine({0.7, 0.3}) == doctest::Approx(0.79).epsilon(1e-12));
    CHECK(or_combine({0.7, 0.3, 0.5}) == doctest::Approx(0.895).epsilon(1e-12));
    CHECK(or_combine({0.42}) == 0.42);
    CHECK(or_combine({0.42, 0.0}) == 0.42);
    CHECK_THROWS_AS(or_combine({1.2}), DomainError);
    CHECK_THROWS_AS(or_combine({-0.1}), DomainError);
    CHECK_THROWS_AS(or_combine({std::nan("")}), DomainError);
}

TEST_CASE("or_combine matches the union oracle and is commutative and monotone") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        std::vector<double> ps(rng() % 6);
        for (auto& p : ps) p = u(rng);
        double v = or_combine(std::span<const double>(ps));
        CHECK(std::abs(v - union_bruteforce(ps)) < 1e-12);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        auto shuffled = ps;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(std::abs(or_combine(std::span<const double>(shuffled)) - v) < 1e-12);
        if (!ps.empty()) {
            auto bigger = ps;
            bigger[0] = std::min(1.0, bigger[0] + 0.1);
            CHECK(or_combine(std::span<const double>(bigger)) >= v);
        }
    }
}

TEST_CASE("window merge") {
    PipelineConfig cfg;
    std::vector<MatchHit> a = {hit(Proto::dns, 0), hit(Proto::ssl, 100)};
    auto w = window_merge(a, cfg);
    REQUIRE(w.size() == 1);
    CHECK(w[0].dns_seen);
    CHECK(w[0].ssl_seen);

    std::vector<MatchHit> b = {hit(Proto::dns, 0), hit(Proto::dns, 400)};
    w = window_merge(b, cfg);
    REQUIRE(w.size() == 2);
    CHECK(w[1].window_start == 400);

    std::vector<MatchHit> c = {hit(Proto::http, 10, 2), hit(Proto::http, 20, 9)};
    w = window_merge(c, cfg);
    REQUIRE(w.size() == 1);
    REQUIRE(w[0].sim);
    CHECK(*w[0].sim == (64.0 - 2) / 64);
    CHECK(w[0].best_dist == 2);
    CHECK_FALSE(w[0].http_rejected);

    std::vector<MatchHit> far = {hit(Proto::http, 10, 30)};
    w = window_merge(far, cfg);
    CHECK(w[0].http_rejected);
    CHECK_FALSE(w[0].sim);
}

TEST_CASE("score") {
    PipelineConfig cfg;
    CHECK(score(evidence(true, true, false), cfg) == doctest::Approx(0.79).epsilon(1e-12));
    CHECK(score(evidence(false, false, true, 0.96875), cfg) == doctest::Approx(0.984375).epsilon(1e-12));
    auto rejected = evidence(false, false, true);
    rejected.http_rejected = true;
    CHECK(score(rejected, cfg) == 0.0);
    CHECK(score(evidence(false, false, false), cfg) == 0.0);
}

TEST_CASE("classify and status") {
    PipelineConfig cfg;
    CHECK(classify(0.99, cfg) == Decision::Publish);
    CHECK(classify(0.95, cfg) == Decision::Recommend);
    CHECK(classify(0.10, cfg) == Decision::Hold);
    CHECK(classify(cfg.t1, cfg) == Decision::Publish);
    CHECK(classify(cfg.t2, cfg) == Decision::Recommend);
    CHECK(status_for(0.99, cfg) == Status::Published);
    CHECK(status_from_string("verified") == Status::Verified);
    CHECK(to_string(Status::Recommended) == "recommended");
}

TEST_CASE("daily update") {
    PipelineConfig cfg;
    auto st = new_state(key(), 0);
    st.p = 0.50;
    CHECK(daily_update(st, false, 86400, cfg).p == doctest::Approx(0.45));
    st.p = 0.975;
    CHECK(daily_update(st, true, 86400, cfg).p == 0.98);
    st.p = 0.03;
    CHECK(daily_update(st, false, 86400, cfg).p == 0.0);
    st.p = 0.99;
    CHECK(daily_update(st, true, 86400, cfg).p == 0.99);

    // Repeated unseen days reach exactly zero in ceil(p/dec) days.
    for (double p0 : {0.5, 0.33, 0.9, 0.05, 1.0}) {
        st.p = p0;
        int days = 0;
        while (st.p > 0.0) {
            st = daily_update(st, false, 86400.0 * (days + 1), cfg);
            ++days;
            CHECK(st.p >= 0.0);
            CHECK(st.p <= 1.0);
        }
        CHECK(days == static_cast<int>(std::ceil(p0 / cfg.dec - 1e-9)));
    }

    auto v = new_state(key(), 0);
    v.p = 1.0;
    v.status = Status::Verified;
    v.verified_until = 1000.0;
    auto kept = daily_update(v, false, 500.0, cfg);
    CHECK(kept.status == Status::Verified);
    auto demoted = daily_update(v, false, 2000.0, cfg);
    CHECK(demoted.status == Status::Published);
    CHECK(demoted.p == cfg.t1);

    auto r = new_state(key(), 0);
    r.status = Status::Rejected;
    r.rejected_until = 1000.0;
    CHECK(daily_update(r, true, 500.0, cfg).status == Status::Rejected);
    CHECK(daily_update(r, true, 500.0, cfg).p == 0.0);
    CHECK(daily_update(r, true, 2000.0, cfg).status == Status::Hold);
}

TEST_CASE("apply evidence") {
    PipelineConfig cfg;
    auto st = new_state(key(), 0);
    st.p = 0.3;
    auto up = apply_evidence(st, evidence(true, true, false), cfg);
    CHECK(up.p == doctest::Approx(0.79));
    CHECK(up.status == Status::Hold);
    CHECK(up.sightings == 1);
    CHECK(up.seen(Proto::ssl));
    CHECK(up.seen(Proto::dns));
    CHECK_FALSE(up.seen(Proto::http));

    auto same = apply_evidence(up, evidence(false, false, true), cfg);
    CHECK(same.p == doctest::Approx(0.79));

    auto rej = new_state(key(), 0);
    rej.status = Status::Rejected;
    auto still = apply_evidence(rej, evidence(true, true, true, 1.0), cfg);
    CHECK(still.p == 0.0);
    CHECK(still.status == Status::Rejected);

    auto pub = apply_evidence(new_state(key(), 0), evidence(true, true, true, 1.0), cfg);
    CHECK(pub.status == Status::Published);
}

TEST_CASE("window tracker closes windows in order") {
    PipelineConfig cfg;
    WindowTracker w;
    CHECK_FALSE(w.add(hit(Proto::dns, 0), cfg));
    CHECK_FALSE(w.add(hit(Proto::ssl, 10), cfg));
    auto closed = w.add(hit(Proto::ssl, 400), cfg);
    REQUIRE(closed);
    CHECK(closed->dns_seen);
    CHECK(closed->ssl_seen);
    CHECK(w.open_windows() == 1);
    CHECK(w.close_before(500, cfg).empty());
    auto late = w.close_before(800, cfg);
    REQUIRE(late.size() == 1);
    CHECK(late[0].window_start == 400);
    CHECK(w.close_all().empty());
}

}
