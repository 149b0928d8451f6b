#include "bindwatch/active_probe.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstring>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "bindwatch/match_filter.hpp"
#include "bindwatch/wire.hpp"

namespace bindwatch {

// ------------------------------------------------------------- DNS

ResolverEndpoint ResolverEndpoint::parse(std::string_view text) {
    std::string_view host = text;
    std::string_view port;
    if (text.starts_with("[")) {
        auto close = text.find(']');
        if (close == std::string_view::npos) throw ConfigInvalid("resolver: bad address " + std::string(text));
        host = text.substr(1, close - 1);
        if (close + 1 < text.size()) {
            if (text[close + 1] != ':') throw ConfigInvalid("resolver: bad address " + std::string(text));
            port = text.substr(close + 2);
        }
    } else if (std::count(text.begin(), text.end(), ':') == 1) {
        auto colon = text.find(':');
        host = text.substr(0, colon);
        port = text.substr(colon + 1);
    }
    auto ip = IpAddr::try_parse(host);
    if (!ip) throw ConfigInvalid("resolver: bad address " + std::string(text));
    ResolverEndpoint ep{*ip, 53};
    if (!port.empty()) {
        int p = 0;
        for (char c : port) {
            if (c < '0' || c > '9' || p > 65535) throw ConfigInvalid("resolver: bad port " + std::string(text));
            p = p * 10 + (c - '0');
        }
        if (p < 1 || p > 65535) throw ConfigInvalid("resolver: bad port " + std::string(text));
        ep.port = static_cast<std::uint16_t>(p);
    }
    return ep;
}

namespace {

class Socket {
public:
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket() {
        if (fd_ >= 0) ::close(fd_);
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    int get() const noexcept { return fd_; }

private:
    int fd_;
};

socklen_t fill_sockaddr(const IpAddr& ip, std::uint16_t port, sockaddr_storage& ss) {
    std::memset(&ss, 0, sizeof ss);
    if (ip.version() == IpVersion::v4) {
        auto* sa = reinterpret_cast<sockaddr_in*>(&ss);
        sa->sin_family = AF_INET;
        sa->sin_port = htons(port);
        std::memcpy(&sa->sin_addr, ip.data(), 4);
        return sizeof(sockaddr_in);
    }
    auto* sa = reinterpret_cast<sockaddr_in6*>(&ss);
    sa->sin6_family = AF_INET6;
    sa->sin6_port = htons(port);
    std::memcpy(&sa->sin6_addr, ip.data(), 16);
    return sizeof(sockaddr_in6);
}

constexpr int kRcodeServfail = 2;
constexpr int kRcodeNxdomain = 3;

}  // namespace

std::vector<IpAddr> resolve_domain(const DomainName& domain, const ResolverEndpoint& resolver, double timeout_secs,
                                   int retries) {
    sockaddr_storage ss;
    socklen_t len = fill_sockaddr(resolver.ip, resolver.port, ss);
    Socket sock(::socket(ss.ss_family, SOCK_DGRAM, 0));
    if (sock.get() < 0) throw ProbeTimeout("resolver socket: " + std::string(std::strerror(errno)));
    if (::connect(sock.get(), reinterpret_cast<sockaddr*>(&ss), len) != 0) {
        throw ProbeTimeout("resolver connect: " + std::string(std::strerror(errno)));
    }

    std::random_device rd;
    std::mt19937 rng(rd());
    for (int attempt = 0; attempt <= retries; ++attempt) {
        auto id = static_cast<std::uint16_t>(rng());
        auto query = encode_dns_query(id, domain, kDnsTypeA);
        if (::send(sock.get(), query.data(), query.size(), 0) < 0) continue;

        auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_secs);
        for (;;) {
            auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) break;
            pollfd pfd{sock.get(), POLLIN, 0};
            int pr = ::poll(&pfd, 1, static_cast<int>(left.count()));
            if (pr <= 0) break;
            std::uint8_t buf[4096];
            ssize_t n = ::recv(sock.get(), buf, sizeof buf, 0);
            if (n <= 0) break;  // e.g. ICMP port unreachable
            DnsMessage msg;
            try {
                msg = decode_dns_message(Bytes(buf, static_cast<std::size_t>(n)));
            } catch (const DnsMalformed&) {
                continue;
            }
            if (!msg.is_response || msg.id != id || msg.qname != domain) continue;
            if (msg.rcode == kRcodeNxdomain) return {};
            if (msg.rcode == kRcodeServfail) throw Servfail("SERVFAIL for " + domain.str());
            if (msg.rcode != 0) throw Servfail("rcode " + std::to_string(msg.rcode) + " for " + domain.str());

            DnsObservation obs{resolver.ip, msg.qname, msg.answers};
            auto chain = cname_chain(obs);
            std::vector<DomainName> names{domain};
            names.insert(names.end(), chain.begin(), chain.end());
            std::vector<IpAddr> out;
            for (const auto& rr : msg.answers) {
                if (rr.rtype != RType::A) continue;
                if (std::find(names.begin(), names.end(), rr.name) == names.end()) continue;
                const auto& ip = std::get<IpAddr>(rr.data);
                if (std::find(out.begin(), out.end(), ip) == out.end()) out.push_back(ip);
            }
            return out;
        }
    }
    throw ProbeTimeout("no answer for " + domain.str() + " from " + resolver.ip.to_string());
}

// ------------------------------------------------------------- HTTP fetch

std::string_view to_string(ProbeOutcome o) noexcept {
    switch (o) {
        case ProbeOutcome::connected: return "connected";
        case ProbeOutcome::refused: return "refused";
        case ProbeOutcome::timeout: return "timeout";
        case ProbeOutcome::dns_mismatch: return "dns_mismatch";
    }
    return "?";
}

namespace {

// Path of a same-domain redirect target, or nullopt when it leaves the domain.
std::optional<std::string> same_domain_target(std::string_view location, const DomainName& domain) {
    if (location.starts_with("/") && !location.starts_with("//")) return std::string(location);
    std::string_view rest = location;
    if (rest.starts_with("http://")) rest.remove_prefix(7);
    else if (rest.starts_with("//")) rest.remove_prefix(2);
    else return std::nullopt;
    auto slash = rest.find('/');
    std::string_view authority = rest.substr(0, slash);
    if (auto colon = authority.find(':'); colon != std::string_view::npos) authority = authority.substr(0, colon);
    auto host = try_canonicalize_domain(authority);
    if (!host || *host != domain) return std::nullopt;
    return slash == std::string_view::npos ? std::string("/") : std::string(rest.substr(slash));
}

}  // namespace

ProbeResult fetch_by_ip(const IpAddr& ip, const DomainName& domain, double timeout_secs, int port) {
    ProbeResult r;
    r.key = CandidateKey{ip, domain};
    r.attempts = 1;

    auto secs = static_cast<time_t>(timeout_secs);
    auto usecs = static_cast<time_t>((timeout_secs - static_cast<double>(secs)) * 1e6);
    httplib::Client client(ip.to_string(), port);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    client.set_follow_location(false);
    client.set_keep_alive(false);

    std::string path = "/";
    for (int hop = 0;; ++hop) {
        int status = 0;
        std::string location;
        std::string body;
        bool truncated = false;
        httplib::Headers headers{{"Host", domain.str()}, {"Accept", "text/html,*/*"}};
        auto res = client.Get(
            path, headers,
            [&](const httplib::Response& resp) {
                status = resp.status;
                location = resp.get_header_value("Location");
                return true;
            },
            [&](const char* data, std::size_t n) {
                std::size_t room = kMaxBodyBytes - body.size();
                body.append(data, std::min(n, room));
                if (n > room) {
                    truncated = true;
                    return false;
                }
                return true;
            });
        r.ts = system_clock()();
        if (!res && !(truncated && status != 0)) {
            switch (res.error()) {
                case httplib::Error::ConnectionTimeout:
                case httplib::Error::Read:
                case httplib::Error::Write:
                    r.outcome = ProbeOutcome::timeout;
                    break;
                default:
                    r.outcome = ProbeOutcome::refused;
                    break;
            }
            return r;
        }
        r.outcome = ProbeOutcome::connected;
        r.status = status;
        r.body = std::move(body);
        if (status >= 300 && status < 400 && hop < kMaxRedirects) {
            if (auto next = same_domain_target(location, domain)) {
                path = *next;
                continue;
            }
        }
        return r;
    }
}

void attach_distance(ProbeResult& r, const std::optional<Fingerprint>& reference) {
    r.dist.reset();
    if (r.outcome == ProbeOutcome::connected && !r.body.empty() && reference) {
        r.dist = hamming(fingerprint_document(r.body), *reference);
    }
}

Verdict auto_verdict(const ProbeResult& r, const std::optional<Fingerprint>& reference, const PipelineConfig& cfg) {
    Verdict v;
    v.key = r.key;
    v.source = VerdictSource::automatic;
    v.ts = r.ts;
    v.expires_ts = r.ts + cfg.verdict_ttl_secs;

    switch (r.outcome) {
        case ProbeOutcome::refused:
        case ProbeOutcome::timeout:
            v.value = VerdictValue::Incorrect;
            return v;
        case ProbeOutcome::dns_mismatch:
            v.value = VerdictValue::Uncertain;
            return v;
        case ProbeOutcome::connected:
            break;
    }
    if (r.status >= 400) {
        v.value = VerdictValue::Incorrect;
    } else if (r.status >= 300 || r.status < 200) {
        v.value = VerdictValue::Uncertain;
    } else if (!reference || !r.dist) {
        v.value = VerdictValue::Uncertain;
    } else if (*r.dist <= cfg.simhash_threshold_n) {
        v.value = VerdictValue::Correct;
    } else if (*r.dist > cfg.sim_reject_dist) {
        v.value = VerdictValue::Incorrect;
    } else {
        v.value = VerdictValue::Uncertain;
    }
    return v;
}

Allowlist::Allowlist(const std::vector<std::string>& cidrs) {
    for (const auto& cidr : cidrs) {
        auto slash = cidr.find('/');
        auto ip = IpAddr::try_parse(std::string_view(cidr).substr(0, slash));
        if (!ip) throw ConfigInvalid("probe_allowlist: bad network " + cidr);
        int bits = static_cast<int>(ip->size() * 8);
        int len = bits;
        if (slash != std::string::npos) {
            try {
                std::size_t used = 0;
                len = std::stoi(cidr.substr(slash + 1), &used);
                if (used != cidr.size() - slash - 1) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ConfigInvalid("probe_allowlist: bad prefix " + cidr);
            }
        }
        if (len < 0 || len > bits) throw ConfigInvalid("probe_allowlist: bad prefix " + cidr);
        nets_.emplace_back(*ip, len);
    }
}

bool Allowlist::allows(const IpAddr& ip) const noexcept {
    return std::any_of(nets_.begin(), nets_.end(), [&](const auto& net) { return ip.in_prefix(net.first, net.second); });
}

ProbeResult HttpFetcher::fetch(const CandidateKey& key) {
    ProbeResult r;
    for (int attempt = 1; attempt <= kMaxProbeAttempts; ++attempt) {
        r = fetch_by_ip(key.ip, key.domain, timeout_secs_, port_);
        r.attempts = attempt;
        if (r.outcome != ProbeOutcome::timeout) break;
    }
    return r;
}

// ------------------------------------------------------------- scheduling

ProbeScheduler::ProbeScheduler(Store& store, Fetcher& fetcher)
    : store_(store), fetcher_(fetcher), allowlist_(store.config().probe_allowlist) {}

std::vector<ProbeTask> ProbeScheduler::plan(double now) const {
    std::vector<ProbeTask> tasks;
    CandidateFilter filter;
    filter.status = Status::Recommended;
    for (const auto& st : store_.list_candidates(filter)) {
        if (st.last_probe_ts && now - *st.last_probe_ts < store_.config().verdict_ttl_secs) continue;
        tasks.push_back(ProbeTask{st.key, ProbeReason::recommended, now, 0});
    }
    return tasks;
}

ProbeRunStats ProbeScheduler::run_once() { return probe(plan(store_.now())); }

ProbeRunStats ProbeScheduler::probe(std::vector<ProbeTask> tasks) {
    ProbeRunStats stats;
    std::vector<ProbeTask> runnable;
    for (auto& t : tasks) {
        if (allowlist_.allows(t.key.ip)) runnable.push_back(std::move(t));
        else ++stats.skipped_allowlist;
    }
    stats.tasks = runnable.size();
    if (runnable.empty()) return stats;

    std::vector<ProbeResult> results(runnable.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> inflight{0};
    std::atomic<std::size_t> peak{0};
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= runnable.size()) return;
            std::size_t now_in = inflight.fetch_add(1) + 1;
            std::size_t seen = peak.load();
            while (now_in > seen && !peak.compare_exchange_weak(seen, now_in)) {
            }
            try {
                results[i] = fetcher_.fetch(runnable[i].key);
            } catch (const std::exception&) {
                results[i] = ProbeResult{runnable[i].key, ProbeOutcome::refused, 0, {}, std::nullopt, store_.now(), 1};
            }
            inflight.fetch_sub(1);
        }
    };
    std::size_t width = std::min<std::size_t>(runnable.size(),
                                               static_cast<std::size_t>(std::max(1, store_.config().max_inflight_probes)));
    std::vector<std::thread> pool;
    pool.reserve(width);
    for (std::size_t i = 0; i < width; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    stats.peak_inflight = peak.load();

    for (auto& r : results) {
        r.ts = store_.now();
        auto reference = store_.reference_for(r.key.domain);
        attach_distance(r, reference);
        Verdict v = auto_verdict(r, reference, store_.config());
        switch (r.outcome) {
            case ProbeOutcome::connected: ++stats.connected; break;
            case ProbeOutcome::refused: ++stats.refused; break;
            case ProbeOutcome::timeout: ++stats.timeouts; break;
            case ProbeOutcome::dns_mismatch: break;
        }
        store_.apply_verdict(v);
        switch (v.value) {
            case VerdictValue::Correct: ++stats.correct; break;
            case VerdictValue::Incorrect: ++stats.incorrect; break;
            case VerdictValue::Uncertain:
                ++stats.uncertain;
                store_.enqueue_review(r.key, r.body, r.dist);
                break;
        }
    }
    store_.auto_generate_ip_strings();
    store_.flush();
    return stats;
}

// ------------------------------------------------------------- references

ReferenceFingerprint reference_from_file(Store& store, const DomainName& domain, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FetchFailed("cannot read homepage file " + path);
    std::string page(kMaxBodyBytes, '\0');
    in.read(page.data(), static_cast<std::streamsize>(page.size()));
    page.resize(static_cast<std::size_t>(in.gcount()));
    ReferenceFingerprint ref{domain, fingerprint_document(page), kFingerprintVersion, store.now()};
    store.put_pending_reference(ref);
    return ref;
}

ReferenceFingerprint crawl_reference(Store& store, const DomainName& domain, const ResolverEndpoint& resolver,
                                     Fetcher& fetcher) {
    std::vector<IpAddr> addrs;
    try {
        addrs = resolve_domain(domain, resolver);
    } catch (const Error& e) {
        throw FetchFailed("resolving " + domain.str() + ": " + e.what());
    }
    for (const auto& ip : addrs) {
        ProbeResult r = fetcher.fetch(CandidateKey{ip, domain});
        if (r.outcome == ProbeOutcome::connected && r.status >= 200 && r.status < 300 && !r.body.empty()) {
            ReferenceFingerprint ref{domain, fingerprint_document(r.body), kFingerprintVersion, store.now()};
            store.put_pending_reference(ref);
            return ref;
        }
    }
    throw FetchFailed("no homepage for " + domain.str());
}

// ------------------------------------------------------------- providers

std::vector<Suggestion> JsonlCandidateProvider::suggestions() {
    std::ifstream in(path_);
    if (!in) throw FetchFailed("cannot read " + path_);
    std::vector<Suggestion> out;
    std::string line;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) continue;
        auto d = j.find("domain");
        auto ip = j.find("ip");
        if (d == j.end() || ip == j.end() || !d->is_string() || !ip->is_string()) continue;
        auto domain = try_canonicalize_domain(d->get_ref<const std::string&>());
        auto addr = IpAddr::try_parse(ip->get_ref<const std::string&>());
        if (!domain || !addr) continue;
        std::string source = j.value("source", std::string("external"));
        out.push_back(Suggestion{std::move(*domain), *addr, std::move(source)});
    }
    return out;
}

}  // namespace bindwatch
