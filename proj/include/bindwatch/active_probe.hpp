#pragma once

// Active correction: resolve, fetch by IP with the host name pinned, judge
// the page against the reference fingerprint, and hand ambiguous cases to
// human review.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bindwatch/feedback_store.hpp"
#include "bindwatch/fingerprint.hpp"
#include "bindwatch/model.hpp"

namespace bindwatch {

class ProbeTimeout : public Error {
public:
    using Error::Error;
};

class Servfail : public Error {
public:
    using Error::Error;
};

class FetchFailed : public Error {
public:
    using Error::Error;
};

// ------------------------------------------------------------- DNS

struct ResolverEndpoint {
    IpAddr ip;
    std::uint16_t port = 53;

    // "1.2.3.4", "1.2.3.4:5353", "[::1]:53". Throws ConfigInvalid.
    static ResolverEndpoint parse(std::string_view text);
};

// A query for `domain`; returns the A addresses reached through the answer's
// CNAME chain. NXDOMAIN yields an empty list. Retries `retries` times on
// timeout, then throws ProbeTimeout; SERVFAIL throws Servfail.
std::vector<IpAddr> resolve_domain(const DomainName& domain, const ResolverEndpoint& resolver,
                                   double timeout_secs = 2.0, int retries = 2);

// ------------------------------------------------------------- HTTP fetch

enum class ProbeOutcome : std::uint8_t { connected, refused, timeout, dns_mismatch };
std::string_view to_string(ProbeOutcome o) noexcept;

struct ProbeResult {
    CandidateKey key;
    ProbeOutcome outcome = ProbeOutcome::refused;
    int status = 0;    // connected only
    std::string body;  // connected only, at most kMaxBodyBytes
    std::optional<int> dist;
    double ts = 0.0;
    int attempts = 0;
};

inline constexpr int kMaxProbeAttempts = 3;
inline constexpr int kMaxRedirects = 3;

// One GET for "/" to ip:port presenting `domain` as the host; same-domain
// redirects are followed on the same address.
ProbeResult fetch_by_ip(const IpAddr& ip, const DomainName& domain, double timeout_secs, int port = 80);

// Sets `dist` for connected results with a body when a reference exists.
void attach_distance(ProbeResult& r, const std::optional<Fingerprint>& reference);

Verdict auto_verdict(const ProbeResult& r, const std::optional<Fingerprint>& reference, const PipelineConfig& cfg);

// CIDR allowlist restricting probe targets.
class Allowlist {
public:
    // Throws ConfigInvalid on a bad CIDR.
    explicit Allowlist(const std::vector<std::string>& cidrs);
    bool allows(const IpAddr& ip) const noexcept;

private:
    std::vector<std::pair<IpAddr, int>> nets_;
};

class Fetcher {
public:
    virtual ~Fetcher() = default;
    // Must be safe to call from several threads at once.
    virtual ProbeResult fetch(const CandidateKey& key) = 0;
};

// fetch_by_ip with up to kMaxProbeAttempts attempts on timeout.
class HttpFetcher : public Fetcher {
public:
    HttpFetcher(int port, double timeout_secs) : port_(port), timeout_secs_(timeout_secs) {}
    ProbeResult fetch(const CandidateKey& key) override;

private:
    int port_;
    double timeout_secs_;
};

// ------------------------------------------------------------- scheduling

enum class ProbeReason : std::uint8_t { recommended, reference_refresh };

struct ProbeTask {
    CandidateKey key;
    ProbeReason reason = ProbeReason::recommended;
    double enqueued_ts = 0.0;
    int attempts = 0;
};

struct ProbeRunStats {
    std::size_t tasks = 0;
    std::size_t skipped_allowlist = 0;
    std::size_t connected = 0;
    std::size_t refused = 0;
    std::size_t timeouts = 0;
    std::size_t correct = 0;
    std::size_t incorrect = 0;
    std::size_t uncertain = 0;
    std::size_t peak_inflight = 0;
};

class ProbeScheduler {
public:
    ProbeScheduler(Store& store, Fetcher& fetcher);

    // Recommended states not probed within the verdict TTL.
    std::vector<ProbeTask> plan(double now) const;
    ProbeRunStats run_once();
    // Probes arbitrary pairs (external suggestions) and applies verdicts.
    ProbeRunStats probe(std::vector<ProbeTask> tasks);

private:
    Store& store_;
    Fetcher& fetcher_;
    Allowlist allowlist_;
};

// ------------------------------------------------------------- references

// Fingerprints an operator-supplied homepage file and stores it pending
// confirmation. Throws FetchFailed when the file cannot be read.
ReferenceFingerprint reference_from_file(Store& store, const DomainName& domain, const std::string& path);

// Resolves the domain normally, fetches its homepage and stores the
// fingerprint pending confirmation. Throws FetchFailed.
ReferenceFingerprint crawl_reference(Store& store, const DomainName& domain, const ResolverEndpoint& resolver,
                                     Fetcher& fetcher);

// ------------------------------------------------------------- providers

struct Suggestion {
    DomainName domain;
    IpAddr ip;
    std::string source;
};

class CandidateProvider {
public:
    virtual ~CandidateProvider() = default;
    virtual std::vector<Suggestion> suggestions() = 0;
};

// {"domain":..., "ip":..., "source":...} per line; malformed lines skipped.
class JsonlCandidateProvider : public CandidateProvider {
public:
    explicit JsonlCandidateProvider(std::string path) : path_(std::move(path)) {}
    std::vector<Suggestion> suggestions() override;

private:
    std::string path_;
};

}  // namespace bindwatch
