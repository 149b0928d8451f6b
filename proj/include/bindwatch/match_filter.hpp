#pragma once

// Watchlist matching of traffic events plus the CDN and URL filters that
// drop server IPs which cannot serve a site's homepage directly.

#include <functional>
#include <list>
#include <memory>
#include <optional>
#include <regex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bindwatch/model.hpp"

namespace bindwatch {

class InvalidSpec : public Error {
public:
    using Error::Error;
};

enum class SpecKind : std::uint8_t { domain, ip, regex };
enum class SpecSource : std::uint8_t { user, automatic };

std::string_view to_string(SpecKind kind) noexcept;
std::string_view to_string(SpecSource source) noexcept;
std::optional<SpecKind> spec_kind_from_string(std::string_view text) noexcept;
std::optional<SpecSource> spec_source_from_string(std::string_view text) noexcept;

// A watchlist pattern. `value` is canonical: a canonical domain, the
// textual form of a parsed address, or a regex that compiles.
struct SpecificString {
    SpecKind kind = SpecKind::domain;
    std::string value;
    SpecSource source = SpecSource::user;

    friend bool operator==(const SpecificString&, const SpecificString&) = default;
};

// Validates and canonicalizes. Throws InvalidSpec.
SpecificString make_specific_string(SpecKind kind, std::string_view value, SpecSource source);

// True iff `name` equals the watched domain or is a subdomain of it.
bool matches_domain(std::string_view spec_domain, const DomainName& name) noexcept;
bool matches_domain(const SpecificString& spec, const DomainName& name) noexcept;

enum class UrlClass : std::uint8_t { Homepage, NonHomepage, Unknown };

std::string_view to_string(UrlClass cls) noexcept;

struct HttpDetail {
    std::string url_path;
    std::optional<int> status;
    std::optional<std::string> body;

    friend bool operator==(const HttpDetail&, const HttpDetail&) = default;
};

struct MatchHit {
    CandidateKey key;
    Proto proto = Proto::dns;
    double ts = 0.0;
    std::vector<DomainName> cname_chain;  // dns only
    std::optional<HttpDetail> http;       // http only
    std::optional<UrlClass> url_class;    // set by filter_hits on http hits
    std::optional<int> fp_dist;           // distance to the reference page, when one exists

    friend bool operator==(const MatchHit&, const MatchHit&) = default;
};

// Compiled watchlist for repeated matching.
class Matcher {
public:
    Matcher() = default;
    explicit Matcher(std::span<const SpecificString> specs);

    void add(const SpecificString& spec);
    void remove(const SpecificString& spec);
    std::size_t size() const noexcept { return domains_.size() + ips_.size() + regexes_.size(); }

    std::vector<MatchHit> match(const TrafficEvent& event) const;

private:
    bool name_matches(const DomainName& name) const;

    std::unordered_set<std::string> domains_;
    std::unordered_set<IpAddr, IpAddrHash> ips_;
    std::vector<std::pair<std::string, std::shared_ptr<const std::regex>>> regexes_;
};

std::vector<MatchHit> match_event(std::span<const SpecificString> watchlist, const TrafficEvent& event);

// Ordered CNAME targets followed from `qname` through the answer section.
std::vector<DomainName> cname_chain(const DnsObservation& obs);

// Feature tables for both filters. Defaults are compiled in; operators may
// load replacements from JSON.
struct FilterFeatures {
    std::vector<std::string> cdn_substrings;
    std::vector<std::string> cdn_tokens;  // must match a whole dot/hyphen-delimited token
    std::vector<std::string> nontext_suffixes;

    static const FilterFeatures& defaults();
    // {"cdn_substrings":[...], "cdn_tokens":[...], "nontext_suffixes":[...]};
    // absent arrays keep their defaults. Throws ConfigInvalid.
    static FilterFeatures parse(std::string_view json_text);
    static FilterFeatures load(const std::string& path);
};

// True when any chain element carries a CDN feature string.
bool cdn_filter(std::span<const DomainName> chain, const FilterFeatures& features = FilterFeatures::defaults());

UrlClass url_classify(std::string_view url_path, const DomainName& host,
                      const FilterFeatures& features = FilterFeatures::defaults());

// Server IPs already identified as CDN edges. Bounded; inserting beyond
// capacity evicts the least recently inserted address. Lookups take a shared
// lock, inserts an exclusive one.
class CdnIpSet {
public:
    static constexpr std::size_t kDefaultCapacity = 1'000'000;

    explicit CdnIpSet(std::size_t capacity = kDefaultCapacity) : capacity_(capacity) {}

    // Called on every insert or refresh, under the set's lock.
    void on_insert(std::function<void(const IpAddr&)> hook) { hook_ = std::move(hook); }

    void insert(const IpAddr& ip);
    void clear();
    bool contains(const IpAddr& ip) const;
    std::size_t size() const;
    // Addresses from oldest to newest insertion.
    std::vector<IpAddr> items() const;

private:
    std::size_t capacity_;
    std::function<void(const IpAddr&)> hook_;
    mutable std::shared_mutex mutex_;
    std::list<IpAddr> order_;
    std::unordered_map<IpAddr, std::list<IpAddr>::iterator, IpAddrHash> index_;
};

struct FilterCounters {
    std::size_t filtered_cdn = 0;
    std::size_t filtered_url = 0;
};

// Drops DNS hits whose CNAME chain names a CDN (remembering the IP), HTTP
// hits on remembered CDN IPs, and HTTP hits on non-homepage URLs. Surviving
// HTTP hits carry their UrlClass. SSL hits always pass.
std::vector<MatchHit> filter_hits(std::vector<MatchHit> hits, CdnIpSet& cdn_ips,
                                  const FilterFeatures& features = FilterFeatures::defaults(),
                                  FilterCounters* counters = nullptr);

}  // namespace bindwatch
