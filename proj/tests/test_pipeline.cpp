#include <doctest.h>

#include <fstream>
#include <sstream>

#include "bindwatch/pipeline.hpp"
#include "support/oracles.hpp"
#include "support/wire_builders.hpp"

using namespace bindwatch;
using namespace testsupport;

namespace {

DomainName dn(std::string_view s) { return canonicalize_domain(s); }
IpAddr ip(std::string_view s) { return IpAddr::parse(s); }

constexpr double kDay1 = 1700006400.0;  // 00:00 UTC

TrafficEvent dns_event(double ts, std::string_view name, std::string_view addr) {
    return {ts, DnsObservation{ip("192.0.2.53"), dn(name), {DnsRecord{dn(name), RType::A, ip(addr)}}}};
}

TrafficEvent dns_via(double ts, std::string_view name, std::string_view cname, std::string_view addr) {
    return {ts, DnsObservation{ip("192.0.2.53"), dn(name),
                               {DnsRecord{dn(name), RType::CNAME, dn(cname)}, DnsRecord{dn(cname), RType::A, ip(addr)}}}};
}

TrafficEvent ssl_event(double ts, std::string_view addr, std::string_view sni) {
    return {ts, SslObservation{ip(addr), dn(sni)}};
}

TrafficEvent http_event(double ts, std::string_view addr, std::string_view host, std::string path, std::string body) {
    return {ts, HttpObservation{ip(addr), dn(host), std::move(path), 200, std::move(body)}};
}

SpecificString watch(std::string_view d) { return make_specific_string(SpecKind::domain, d, SpecSource::user); }

std::string page() {
    std::string p = "<html><body>";
    for (int i = 0; i < 150; ++i) p += "term" + std::to_string(i * 13 % 401) + " ";
    return p + "</body></html>";
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("dns and ssl in one window combine") {
    Store store(PipelineConfig{});
    store.add_user_string(watch("example.com"));
    Pipeline p(store);
    p.ingest(dns_event(kDay1 + 10, "www.example.com", "203.0.113.7"));
    p.ingest(ssl_event(kDay1 + 20, "203.0.113.7", "www.example.com"));
    p.ingest(ssl_event(kDay1 + 30, "198.51.100.1", "www.other.org"));
    p.finish();
    auto st = store.get_candidate({ip("203.0.113.7"), dn("www.example.com")});
    CHECK(st.p == doctest::Approx(0.79));
    CHECK(st.status == Status::Hold);
    CHECK(st.sightings == 1);
    CHECK(p.report().counters.events_ingested == 3);
    CHECK(p.report().counters.hits == 2);
    CHECK(p.report().windows_closed == 1);
    CHECK(store.candidate_count() == 1);
}

TEST_CASE("cdn chains and non-home urls are filtered") {
    Store store(PipelineConfig{});
    store.add_user_string(watch("example.com"));
    Pipeline p(store);
    p.ingest(dns_via(kDay1, "www.example.com", "e1.akamaiedge.net", "203.0.113.50"));
    p.ingest(http_event(kDay1 + 1, "203.0.113.50", "www.example.com", "/", "<html>edge copy</html>"));
    p.ingest(http_event(kDay1 + 2, "203.0.113.60", "www.example.com", "/files/setup.exe", "MZ"));
    p.finish();
    CHECK(store.candidate_count() == 0);
    CHECK(p.report().counters.filtered_cdn == 2);
    CHECK(p.report().counters.filtered_url == 1);
    CHECK(store.cdn_ips().contains(ip("203.0.113.50")));
}

TEST_CASE("http homepage with a reference publishes") {
    Store store(PipelineConfig{});
    store.add_user_string(watch("example.com"));
    store.put_pending_reference({dn("example.com"), fingerprint_document(page()), kFingerprintVersion, kDay1});
    store.confirm_reference(dn("example.com"));
    Pipeline p(store);
    p.ingest(http_event(kDay1, "203.0.113.7", "www.example.com", "/", page()));
    p.ingest(http_event(kDay1, "203.0.113.8", "www.example.com", "/", "<html>parked domain for sale</html>"));
    p.finish();
    auto good = store.get_candidate({ip("203.0.113.7"), dn("www.example.com")});
    CHECK(good.p == 1.0);
    CHECK(good.status == Status::Published);
    auto bad = store.get_candidate({ip("203.0.113.8"), dn("www.example.com")});
    CHECK(bad.p == 0.0);
    CHECK(store.publish_list(kDay1).size() == 1);
    CHECK(p.report().auto_entries == 1);
}

TEST_CASE("windows close on time and across days") {
    Store store(PipelineConfig{});
    store.add_user_string(watch("example.com"));
    Pipeline p(store);
    p.ingest(dns_event(kDay1 + 100, "www.example.com", "203.0.113.7"));
    p.ingest(ssl_event(kDay1 + 100 + 400, "203.0.113.7", "www.example.com"));  // a second window
    p.ingest(ssl_event(kDay1 + 86400 + 5, "198.51.100.9", "mail.example.com"));
    auto st = store.get_candidate({ip("203.0.113.7"), dn("www.example.com")});
    CHECK(st.sightings == 2);
    // Seen on day 1, then rolled into day 2: 0.7 + inc.
    CHECK(st.p == doctest::Approx(0.72));
    CHECK(store.current_day() == day_index(kDay1) + 1);
    p.finish();
    CHECK(p.report().windows_closed == 3);
}

TEST_CASE("two-day feedback loop through the auto IP entry") {
    PipelineConfig cfg;
    cfg.s = 0.9;
    cfg.h = 0.7;
    cfg.d = 0.5;
    double now = kDay1;
    Store store(cfg, [&] { return now; });
    auto user = watch("example.com");
    store.add_user_string(user);
    CandidateKey key{ip("203.0.113.7"), dn("www.example.com")};

    Pipeline p(store);
    p.ingest(dns_event(kDay1 + 3600, "www.example.com", "203.0.113.7"));
    p.ingest(ssl_event(kDay1 + 3610, "203.0.113.7", "www.example.com"));
    p.finish();
    CHECK(store.get_candidate(key).p == doctest::Approx(0.95));
    auto wl = store.watchlist();
    REQUIRE(wl.size() == 2);
    CHECK(std::any_of(wl.begin(), wl.end(), [](const WatchlistEntry& e) {
        return e.spec.kind == SpecKind::ip && e.spec.value == "203.0.113.7" && e.spec.source == SpecSource::automatic;
    }));
    CHECK(store.publish_list(now).empty());

    // The domain string is gone; only the fed-back IP string can see day 2.
    CHECK(store.remove_watch(user));
    now = kDay1 + 86400 + 7200;
    Pipeline p2(store);
    p2.ingest(ssl_event(now, "203.0.113.7", "www.example.com"));
    p2.ingest(ssl_event(now + 1, "198.51.100.1", "www.example.com"));
    p2.finish();
    CHECK(p2.report().counters.hits == 1);
    auto day2 = store.get_candidate(key);
    CHECK(day2.p == doctest::Approx(0.97));
    CHECK(day2.last_seen_day == day_index(now));

    store.rollover_to(day_index(now) + 1);
    auto closed = store.get_candidate(key);
    CHECK(closed.p >= cfg.t1);
    CHECK(closed.status == Status::Published);
    auto list = store.publish_list(now + 86400);
    REQUIRE(list.size() == 1);
    CHECK(list[0].key == key);
}

TEST_CASE("jsonl ingest skips malformed lines") {
    Store store(PipelineConfig{});
    store.add_user_string(watch("example.com"));
    std::ostringstream out;
    write_events_jsonl(out, dns_event(kDay1, "www.example.com", "203.0.113.7"));
    out << "{not json\n";
    write_events_jsonl(out, ssl_event(kDay1 + 1, "203.0.113.7", "www.example.com"));
    std::istringstream in(out.str());
    auto report = ingest_jsonl(store, in);
    CHECK(report.skipped_lines == 1);
    CHECK(report.counters.events_ingested == 2);
    CHECK(store.get_candidate({ip("203.0.113.7"), dn("www.example.com")}).p == doctest::Approx(0.79));
    CHECK(store.counters().events_ingested == 2);
}

TEST_CASE("pcap ingest") {
    TempDir dir;
    Endpoint client{v4(10, 0, 0, 1), 40000};
    Endpoint tls{v4(203, 0, 113, 7), 443};
    Endpoint resolver{v4(192, 0, 2, 53), 53};
    DnsSpec m;
    m.qname = "www.example.com";
    m.answers.push_back({"www.example.com", 1, 60, v4(203, 0, 113, 7), "", {}});
    std::vector<PcapRecordSpec> recs;
    auto t0 = static_cast<std::uint32_t>(kDay1);
    recs.push_back({t0, 0, ethernet(ip_packet(resolver, client, false, DnsEncoder(true).encode(m)), false), std::nullopt});
    recs.push_back(
        {t0 + 1, 0, ethernet(ip_packet(client, tls, true, client_hello(std::string("www.example.com"))), false), std::nullopt});
    auto image = pcap_image(kLinkTypeEthernet, recs);
    auto path = (dir.path / "cap.pcap").string();
    {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(image.data()), static_cast<std::streamsize>(image.size()));
    }
    Store store(PipelineConfig{});
    store.add_user_string(watch("example.com"));
    auto report = ingest_pcap(store, path);
    REQUIRE(report.capture);
    CHECK(report.capture->events == 2);
    CHECK_FALSE(report.capture_error);
    CHECK(store.get_candidate({ip("203.0.113.7"), dn("www.example.com")}).p == doctest::Approx(0.79));

    {
        std::ofstream out(dir.path / "cut.pcap", std::ios::binary);
        out.write(reinterpret_cast<const char*>(image.data()), static_cast<std::streamsize>(image.size() - 5));
    }
    Store other(PipelineConfig{});
    auto cut = ingest_pcap(other, (dir.path / "cut.pcap").string());
    CHECK(cut.capture_error);
    CHECK(cut.capture->events == 1);

    {
        std::ofstream out(dir.path / "junk.pcap", std::ios::binary);
        out << "not a capture";
    }
    CHECK_THROWS_AS(ingest_pcap(other, (dir.path / "junk.pcap").string()), PcapError);
    CHECK_THROWS_AS(ingest_pcap(other, (dir.path / "missing.pcap").string()), PcapError);
}

}
