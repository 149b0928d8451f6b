#include "bindwatch/model.hpp"

#include <arpa/inet.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace bindwatch {

namespace {

bool valid_label_char(char c) noexcept {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
}

// Returns an empty string on success, otherwise a description.
std::string check_and_lower(std::string_view raw, std::string& out) {
    if (raw.empty()) return "empty name";
    if (raw.back() == '.') raw.remove_suffix(1);
    if (raw.empty()) return "root name";
    if (raw.size() > 253) return "name longer than 253";
    out.resize(raw.size());
    std::size_t label_start = 0;
    for (std::size_t i = 0; i <= raw.size(); ++i) {
        if (i == raw.size() || raw[i] == '.') {
            std::size_t len = i - label_start;
            if (len == 0) return "empty label";
            if (len > 63) return "label longer than 63";
            if (out[label_start] == '-' || out[i - 1] == '-') return "label starts or ends with '-'";
            if (i < raw.size()) out[i] = '.';
            label_start = i + 1;
            continue;
        }
        char c = raw[i];
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        if (!valid_label_char(c)) return "invalid character in label";
        out[i] = c;
    }
    return {};
}

}  // namespace

std::vector<std::string_view> DomainName::labels() const {
    std::vector<std::string_view> out;
    std::string_view rest = text_;
    while (!rest.empty()) {
        auto dot = rest.find('.');
        out.push_back(rest.substr(0, dot));
        if (dot == std::string_view::npos) break;
        rest.remove_prefix(dot + 1);
    }
    return out;
}

DomainName DomainName::parent() const {
    auto dot = text_.find('.');
    if (dot == std::string::npos) return {};
    return DomainName(text_.substr(dot + 1));
}

DomainName canonicalize_domain(std::string_view raw) {
    std::string out;
    if (auto err = check_and_lower(raw, out); !err.empty()) {
        throw InvalidDomain("invalid domain '" + std::string(raw) + "': " + err);
    }
    return DomainName(std::move(out));
}

std::optional<DomainName> try_canonicalize_domain(std::string_view raw) noexcept {
    try {
        std::string out;
        if (!check_and_lower(raw, out).empty()) return std::nullopt;
        return DomainName(std::move(out));
    } catch (...) {
        return std::nullopt;
    }
}

IpAddr IpAddr::v4(std::array<std::uint8_t, 4> octets) noexcept {
    IpAddr ip;
    ip.version_ = IpVersion::v4;
    std::copy(octets.begin(), octets.end(), ip.bytes_.begin());
    return ip;
}

IpAddr IpAddr::v6(std::array<std::uint8_t, 16> octets) noexcept {
    IpAddr ip;
    ip.version_ = IpVersion::v6;
    ip.bytes_ = octets;
    return ip;
}

std::optional<IpAddr> IpAddr::try_parse(std::string_view text) noexcept {
    if (text.empty() || text.size() > 64) return std::nullopt;
    char buf[65];
    text.copy(buf, text.size());
    buf[text.size()] = '\0';
    std::array<std::uint8_t, 16> raw{};
    if (inet_pton(AF_INET, buf, raw.data()) == 1) {
        return v4({raw[0], raw[1], raw[2], raw[3]});
    }
    if (inet_pton(AF_INET6, buf, raw.data()) == 1) return v6(raw);
    return std::nullopt;
}

IpAddr IpAddr::parse(std::string_view text) {
    if (auto ip = try_parse(text)) return *ip;
    throw InvalidAddress("invalid IP address '" + std::string(text) + "'");
}

std::string IpAddr::to_string() const {
    char buf[INET6_ADDRSTRLEN];
    int af = version_ == IpVersion::v4 ? AF_INET : AF_INET6;
    if (inet_ntop(af, bytes_.data(), buf, sizeof buf) == nullptr) return {};
    return buf;
}

bool IpAddr::in_prefix(const IpAddr& net, int prefix_len) const noexcept {
    if (net.version_ != version_) return false;
    int max_bits = static_cast<int>(size()) * 8;
    if (prefix_len < 0 || prefix_len > max_bits) return false;
    int full = prefix_len / 8;
    for (int i = 0; i < full; ++i) {
        if (bytes_[i] != net.bytes_[i]) return false;
    }
    int rem = prefix_len % 8;
    if (rem == 0) return true;
    auto mask = static_cast<std::uint8_t>(0xFF << (8 - rem));
    return (bytes_[full] & mask) == (net.bytes_[full] & mask);
}

std::size_t IpAddrHash::operator()(const IpAddr& ip) const noexcept {
    // FNV-1a over version and address bytes.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint8_t b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    };
    mix(static_cast<std::uint8_t>(ip.version()));
    for (std::size_t i = 0; i < ip.size(); ++i) mix(ip.data()[i]);
    return static_cast<std::size_t>(h);
}

std::size_t CandidateKeyHash::operator()(const CandidateKey& key) const noexcept {
    std::size_t h = IpAddrHash{}(key.ip);
    return h ^ (std::hash<std::string>{}(key.domain.str()) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

std::string_view to_string(Proto proto) noexcept {
    switch (proto) {
        case Proto::dns: return "dns";
        case Proto::http: return "http";
        case Proto::ssl: return "ssl";
    }
    return "?";
}

std::string_view to_string(RType rtype) noexcept {
    switch (rtype) {
        case RType::A: return "A";
        case RType::AAAA: return "AAAA";
        case RType::CNAME: return "CNAME";
    }
    return "?";
}

std::vector<std::string> PipelineConfig::default_probe_allowlist() {
    return {"127.0.0.0/8", "::1/128", "192.0.2.0/24", "198.51.100.0/24", "203.0.113.0/24",
            "2001:db8::/32"};
}

void validate(const PipelineConfig& cfg) {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(cfg.s) || !unit(cfg.d) || !unit(cfg.h)) throw ConfigInvalid("base_prob in [0,1]");
    if (!(cfg.s > cfg.h && cfg.h > cfg.d)) throw ConfigInvalid("s>h>d");
    if (!(cfg.t2 > 0.0 && cfg.t2 < cfg.t1 && cfg.t1 <= 1.0)) throw ConfigInvalid("0<t2<t1<=1");
    if (!unit(cfg.inc) || !unit(cfg.dec)) throw ConfigInvalid("inc,dec in [0,1]");
    if (!(cfg.window_secs > 0.0)) throw ConfigInvalid("window_secs>0");
    if (cfg.simhash_threshold_n < 0 || cfg.simhash_threshold_n > 64) {
        throw ConfigInvalid("simhash_threshold_n in [0,64]");
    }
    if (cfg.sim_reject_dist < 0 || cfg.sim_reject_dist > 64) {
        throw ConfigInvalid("sim_reject_dist in [0,64]");
    }
    if (cfg.simhash_threshold_n > cfg.sim_reject_dist) {
        throw ConfigInvalid("simhash_threshold_n<=sim_reject_dist");
    }
    if (!(cfg.verdict_ttl_secs > 0.0)) throw ConfigInvalid("verdict_ttl_secs>0");
    if (cfg.max_inflight_probes < 1) throw ConfigInvalid("max_inflight_probes>=1");
    if (cfg.probe_http_port < 1 || cfg.probe_http_port > 65535) {
        throw ConfigInvalid("probe_http_port in [1,65535]");
    }
    if (!(cfg.probe_timeout_secs > 0.0)) throw ConfigInvalid("probe_timeout_secs>0");
    for (const auto& cidr : cfg.probe_allowlist) {
        auto slash = cidr.find('/');
        if (slash == std::string::npos || !IpAddr::try_parse(cidr.substr(0, slash))) {
            throw ConfigInvalid("probe_allowlist entries are CIDR prefixes");
        }
    }
}

PipelineConfig parse_config(std::string_view json_text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigInvalid(std::string("json: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigInvalid("config must be a JSON object");

    PipelineConfig cfg;
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "base_prob") {
                if (!value.is_object()) throw ConfigInvalid("base_prob must be an object");
                for (const auto& [proto, p] : value.items()) {
                    if (proto == "ssl") cfg.s = p.get<double>();
                    else if (proto == "dns") cfg.d = p.get<double>();
                    else if (proto == "http") cfg.h = p.get<double>();
                    else throw ConfigInvalid("unknown key base_prob." + proto);
                }
            } else if (key == "t1") cfg.t1 = value.get<double>();
            else if (key == "t2") cfg.t2 = value.get<double>();
            else if (key == "inc") cfg.inc = value.get<double>();
            else if (key == "dec") cfg.dec = value.get<double>();
            else if (key == "window_secs") cfg.window_secs = value.get<double>();
            else if (key == "simhash_threshold_n") cfg.simhash_threshold_n = value.get<int>();
            else if (key == "sim_reject_dist") cfg.sim_reject_dist = value.get<int>();
            else if (key == "verdict_ttl_secs") cfg.verdict_ttl_secs = value.get<double>();
            else if (key == "max_inflight_probes") cfg.max_inflight_probes = value.get<int>();
            else if (key == "probe_allowlist") cfg.probe_allowlist = value.get<std::vector<std::string>>();
            else if (key == "probe_http_port") cfg.probe_http_port = value.get<int>();
            else if (key == "probe_timeout_secs") cfg.probe_timeout_secs = value.get<double>();
            else if (key == "resolver") cfg.resolver = value.get<std::string>();
            else if (key == "api_token") cfg.api_token = value.get<std::string>();
            else throw ConfigInvalid("unknown key " + key);
        }
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("type: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigInvalid("cannot open " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::int64_t day_index(double ts) noexcept {
    return static_cast<std::int64_t>(std::floor(ts / kSecondsPerDay));
}

Clock system_clock() {
    return [] {
        auto since_epoch = std::chrono::system_clock::now().time_since_epoch();
        return std::chrono::duration<double>(since_epoch).count();
    };
}

}  // namespace bindwatch
