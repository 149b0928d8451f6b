#pragma once

// Shared domain types: names, addresses, traffic events and pipeline config.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace bindwatch {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidDomain : public Error {
public:
    using Error::Error;
};

class InvalidAddress : public Error {
public:
    using Error::Error;
};

// `what()` carries the name of the violated invariant, e.g. "s>h>d".
class ConfigInvalid : public Error {
public:
    using Error::Error;
};

// A canonical host name: lowercase labels, no trailing dot.
class DomainName {
public:
    DomainName() = default;

    const std::string& str() const noexcept { return text_; }
    bool empty() const noexcept { return text_.empty(); }
    std::vector<std::string_view> labels() const;

    // Parent name with the leftmost label removed; empty for a single label.
    DomainName parent() const;

    friend bool operator==(const DomainName&, const DomainName&) = default;
    friend auto operator<=>(const DomainName&, const DomainName&) = default;

private:
    friend DomainName canonicalize_domain(std::string_view raw);
    friend std::optional<DomainName> try_canonicalize_domain(std::string_view raw) noexcept;
    explicit DomainName(std::string text) : text_(std::move(text)) {}

    std::string text_;
};

// Lowercases, strips one trailing dot and validates every label.
// Throws InvalidDomain.
DomainName canonicalize_domain(std::string_view raw);
std::optional<DomainName> try_canonicalize_domain(std::string_view raw) noexcept;

enum class IpVersion : std::uint8_t { v4, v6 };

class IpAddr {
public:
    IpAddr() = default;

    static IpAddr v4(std::array<std::uint8_t, 4> octets) noexcept;
    static IpAddr v6(std::array<std::uint8_t, 16> octets) noexcept;
    // Throws InvalidAddress.
    static IpAddr parse(std::string_view text);
    static std::optional<IpAddr> try_parse(std::string_view text) noexcept;

    IpVersion version() const noexcept { return version_; }
    std::size_t size() const noexcept { return version_ == IpVersion::v4 ? 4 : 16; }
    const std::uint8_t* data() const noexcept { return bytes_.data(); }
    std::string to_string() const;

    // True when the leading `prefix_len` bits of both addresses agree and
    // the versions match.
    bool in_prefix(const IpAddr& net, int prefix_len) const noexcept;

    friend bool operator==(const IpAddr&, const IpAddr&) = default;
    friend auto operator<=>(const IpAddr&, const IpAddr&) = default;

private:
    IpVersion version_ = IpVersion::v4;
    std::array<std::uint8_t, 16> bytes_{};
};

struct CandidateKey {
    IpAddr ip;
    DomainName domain;

    friend bool operator==(const CandidateKey&, const CandidateKey&) = default;
    friend auto operator<=>(const CandidateKey&, const CandidateKey&) = default;
};

struct IpAddrHash {
    std::size_t operator()(const IpAddr& ip) const noexcept;
};

struct CandidateKeyHash {
    std::size_t operator()(const CandidateKey& key) const noexcept;
};

enum class Proto : std::uint8_t { dns, http, ssl };

std::string_view to_string(Proto proto) noexcept;

enum class RType : std::uint8_t { A, AAAA, CNAME };

std::string_view to_string(RType rtype) noexcept;

struct DnsRecord {
    DomainName name;
    RType rtype = RType::A;
    std::variant<IpAddr, DomainName> data;

    friend bool operator==(const DnsRecord&, const DnsRecord&) = default;
};

struct DnsObservation {
    IpAddr resolver_ip;
    DomainName qname;
    std::vector<DnsRecord> answers;

    friend bool operator==(const DnsObservation&, const DnsObservation&) = default;
};

inline constexpr std::size_t kMaxBodyBytes = 65536;

struct HttpObservation {
    IpAddr server_ip;
    DomainName host;
    std::string url_path;
    std::optional<int> status;
    std::optional<std::string> body;  // raw bytes, at most kMaxBodyBytes

    friend bool operator==(const HttpObservation&, const HttpObservation&) = default;
};

struct SslObservation {
    IpAddr server_ip;
    DomainName sni;

    friend bool operator==(const SslObservation&, const SslObservation&) = default;
};

using Observation = std::variant<DnsObservation, HttpObservation, SslObservation>;

struct TrafficEvent {
    double ts = 0.0;
    Observation payload;

    Proto proto() const noexcept { return static_cast<Proto>(payload.index()); }

    friend bool operator==(const TrafficEvent&, const TrafficEvent&) = default;
};

struct PipelineConfig {
    double s = 0.70;  // SSL base probability
    double d = 0.30;  // DNS base probability
    double h = 0.50;  // HTTP base probability
    double t1 = 0.98;
    double t2 = 0.90;
    double inc = 0.02;  // probability points per day seen
    double dec = 0.05;  // probability points per day unseen
    double window_secs = 300.0;
    int simhash_threshold_n = 3;
    int sim_reject_dist = 16;
    double verdict_ttl_secs = 86400.0;
    int max_inflight_probes = 8;

    // Probe and service plumbing.
    std::vector<std::string> probe_allowlist = default_probe_allowlist();
    int probe_http_port = 80;
    double probe_timeout_secs = 5.0;
    std::string resolver = "127.0.0.1:53";
    std::string api_token;

    static std::vector<std::string> default_probe_allowlist();

    friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

// Throws ConfigInvalid naming the violated invariant.
void validate(const PipelineConfig& cfg);

// Parses the JSON config text; missing keys keep their defaults and unknown
// keys are rejected. Throws ConfigInvalid.
PipelineConfig parse_config(std::string_view json_text);
PipelineConfig load_config(const std::string& path);

inline constexpr double kSecondsPerDay = 86400.0;

// UTC calendar day index of a timestamp.
std::int64_t day_index(double ts) noexcept;

// Injectable time source (seconds since epoch).
using Clock = std::function<double()>;
Clock system_clock();

}  // namespace bindwatch
