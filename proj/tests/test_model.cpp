#include <doctest.h>

#include <random>

#include "bindwatch/model.hpp"

using namespace bindwatch;

TEST_SUITE("model") {

TEST_CASE("domain canonicalization") {
    CHECK(canonicalize_domain("WWW.Example.COM.").str() == "www.example.com");
    CHECK(canonicalize_domain("example.com").str() == "example.com");
    CHECK_THROWS_AS(canonicalize_domain("-bad-.com"), InvalidDomain);
    CHECK_THROWS_AS(canonicalize_domain(""), InvalidDomain);
    CHECK_THROWS_AS(canonicalize_domain("a..b"), InvalidDomain);
    CHECK_THROWS_AS(canonicalize_domain(std::string(64, 'a') + ".com"), InvalidDomain);
    CHECK_FALSE(try_canonicalize_domain("bad_label!.com"));

    auto d = canonicalize_domain("a.b.example.com");
    CHECK(d.parent().str() == "b.example.com");
    CHECK(d.labels().size() == 4);
    CHECK(canonicalize_domain("com").parent().empty());
}

TEST_CASE("canonicalization is idempotent") {
    std::mt19937 rng(7);
    const std::string alphabet = "abcXYZ019-";
    for (int i = 0; i < 500; ++i) {
        std::string raw;
        int labels = 1 + rng() % 4;
        for (int l = 0; l < labels; ++l) {
            if (l) raw += '.';
            raw += "a";
            int len = rng() % 8;
            for (int k = 0; k < len; ++k) raw += alphabet[rng() % alphabet.size()];
            raw += "z";
        }
        if (rng() % 2) raw += '.';
        auto once = canonicalize_domain(raw);
        CHECK(canonicalize_domain(once.str()) == once);
    }
}

TEST_CASE("addresses") {
    auto a = IpAddr::parse("203.0.113.7");
    CHECK(a.version() == IpVersion::v4);
    CHECK(a.to_string() == "203.0.113.7");
    auto b = IpAddr::parse("2001:DB8::1");
    CHECK(b.version() == IpVersion::v6);
    CHECK(b.to_string() == "2001:db8::1");
    CHECK_THROWS_AS(IpAddr::parse("256.1.1.1"), InvalidAddress);
    CHECK_FALSE(IpAddr::try_parse("example.com"));
    CHECK(a.in_prefix(IpAddr::parse("203.0.113.0"), 24));
    CHECK_FALSE(a.in_prefix(IpAddr::parse("203.0.112.0"), 24));
    CHECK_FALSE(b.in_prefix(IpAddr::parse("203.0.113.0"), 0));
}

TEST_CASE("config parsing") {
    auto cfg = parse_config(R"({"base_prob":{"ssl":0.7,"http":0.5,"dns":0.3}, "t1":0.98, "t2":0.90})");
    CHECK(cfg.window_secs == 300.0);
    CHECK(cfg.s == 0.7);
    CHECK(cfg.h == 0.5);
    CHECK(cfg.d == 0.3);

    try {
        parse_config(R"({"base_prob":{"ssl":0.3,"http":0.5,"dns":0.7}})");
        FAIL("expected ConfigInvalid");
    } catch (const ConfigInvalid& e) {
        CHECK(std::string(e.what()) == "s>h>d");
    }

    CHECK(parse_config("{}") == PipelineConfig{});
    CHECK_THROWS_AS(parse_config(R"({"bogus":1})"), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(R"({"t1":0.8,"t2":0.9})"), ConfigInvalid);
    CHECK_THROWS_AS(parse_config("[1,2]"), ConfigInvalid);
    CHECK_THROWS_AS(parse_config("{"), ConfigInvalid);
    CHECK_THROWS_AS(parse_config(R"({"probe_allowlist":["nope"]})"), ConfigInvalid);
}

TEST_CASE("accepted configs satisfy the ordering invariants") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int accepted = 0;
    for (int i = 0; i < 2000; ++i) {
        char buf[256];
        std::snprintf(buf, sizeof buf, R"({"base_prob":{"ssl":%.3f,"http":%.3f,"dns":%.3f},"t1":%.3f,"t2":%.3f})", u(rng),
                      u(rng), u(rng), u(rng), u(rng));
        try {
            auto cfg = parse_config(buf);
            ++accepted;
            CHECK(cfg.s > cfg.h);
            CHECK(cfg.h > cfg.d);
            CHECK(cfg.t2 < cfg.t1);
        } catch (const ConfigInvalid&) {
        }
    }
    CHECK(accepted > 0);
}

TEST_CASE("day index") {
    CHECK(day_index(0.0) == 0);
    CHECK(day_index(86399.9) == 0);
    CHECK(day_index(86400.0) == 1);
    CHECK(day_index(1700006400.0) == 19676);
    CHECK(day_index(-1.0) == -1);
}

}
