#include "bindwatch/events_io.hpp"

#include <openssl/evp.h>

#include <cmath>

#include <json.hpp>

namespace bindwatch {

using nlohmann::json;

std::string base64_encode(std::string_view raw) {
    std::string out(4 * ((raw.size() + 2) / 3), '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(raw.data()), static_cast<int>(raw.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::optional<std::string> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) return std::nullopt;
    if (text.empty()) return std::string{};
    std::string out(3 * (text.size() / 4), '\0');
    int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
    if (n < 0) return std::nullopt;
    // EVP_DecodeBlock counts padding as zero bytes.
    std::size_t pad = 0;
    if (text.back() == '=') ++pad;
    if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

namespace {

json answer_json(const DnsRecord& rr) {
    json a;
    a["name"] = rr.name.str();
    a["type"] = std::string(to_string(rr.rtype));
    if (rr.rtype == RType::CNAME) a["data"] = std::get<DomainName>(rr.data).str();
    else a["data"] = std::get<IpAddr>(rr.data).to_string();
    return a;
}

std::optional<DnsRecord> parse_answer(const json& a) {
    const auto& type = a.at("type").get_ref<const std::string&>();
    auto name = try_canonicalize_domain(a.at("name").get_ref<const std::string&>());
    if (!name) return std::nullopt;
    const auto& data = a.at("data").get_ref<const std::string&>();
    if (type == "CNAME") {
        auto target = try_canonicalize_domain(data);
        if (!target) return std::nullopt;
        return DnsRecord{*name, RType::CNAME, *target};
    }
    auto ip = IpAddr::try_parse(data);
    if (!ip) return std::nullopt;
    if (type == "A" && ip->version() == IpVersion::v4) return DnsRecord{*name, RType::A, *ip};
    if (type == "AAAA" && ip->version() == IpVersion::v6) return DnsRecord{*name, RType::AAAA, *ip};
    return std::nullopt;
}

}  // namespace

std::string event_to_json_line(const TrafficEvent& ev) {
    json j;
    j["ts"] = ev.ts;
    j["proto"] = std::string(to_string(ev.proto()));
    std::visit(
        [&j](const auto& obs) {
            using T = std::decay_t<decltype(obs)>;
            if constexpr (std::is_same_v<T, DnsObservation>) {
                j["resolver_ip"] = obs.resolver_ip.to_string();
                j["qname"] = obs.qname.str();
                json answers = json::array();
                for (const auto& rr : obs.answers) answers.push_back(answer_json(rr));
                j["answers"] = std::move(answers);
            } else if constexpr (std::is_same_v<T, HttpObservation>) {
                j["server_ip"] = obs.server_ip.to_string();
                j["host"] = obs.host.str();
                j["url_path"] = obs.url_path;
                if (obs.status) j["status"] = *obs.status;
                if (obs.body) j["body_b64"] = base64_encode(*obs.body);
            } else {
                j["server_ip"] = obs.server_ip.to_string();
                j["sni"] = obs.sni.str();
            }
        },
        ev.payload);
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::optional<TrafficEvent> parse_event_line(std::string_view line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    try {
        TrafficEvent ev;
        ev.ts = j.at("ts").get<double>();
        if (!std::isfinite(ev.ts) || ev.ts < 0) return std::nullopt;
        const auto& proto = j.at("proto").get_ref<const std::string&>();
        if (proto == "dns") {
            DnsObservation obs;
            auto resolver = IpAddr::try_parse(j.at("resolver_ip").get_ref<const std::string&>());
            auto qname = try_canonicalize_domain(j.at("qname").get_ref<const std::string&>());
            if (!resolver || !qname) return std::nullopt;
            obs.resolver_ip = *resolver;
            obs.qname = std::move(*qname);
            if (auto it = j.find("answers"); it != j.end()) {
                for (const auto& a : *it) {
                    auto rr = parse_answer(a);
                    if (!rr) return std::nullopt;
                    obs.answers.push_back(std::move(*rr));
                }
            }
            ev.payload = std::move(obs);
        } else if (proto == "http") {
            HttpObservation obs;
            auto server = IpAddr::try_parse(j.at("server_ip").get_ref<const std::string&>());
            auto host = try_canonicalize_domain(j.at("host").get_ref<const std::string&>());
            if (!server || !host) return std::nullopt;
            obs.server_ip = *server;
            obs.host = std::move(*host);
            if (auto it = j.find("url_path"); it != j.end()) obs.url_path = it->get<std::string>();
            if (!obs.url_path.empty() && obs.url_path.front() != '/') return std::nullopt;
            if (auto it = j.find("status"); it != j.end() && !it->is_null()) {
                int status = it->get<int>();
                if (status < 100 || status > 599) return std::nullopt;
                obs.status = status;
            }
            if (auto it = j.find("body_b64"); it != j.end() && !it->is_null()) {
                if (!obs.status) return std::nullopt;
                auto body = base64_decode(it->get_ref<const std::string&>());
                if (!body) return std::nullopt;
                if (body->size() > kMaxBodyBytes) body->resize(kMaxBodyBytes);
                obs.body = std::move(*body);
            }
            ev.payload = std::move(obs);
        } else if (proto == "ssl") {
            auto server = IpAddr::try_parse(j.at("server_ip").get_ref<const std::string&>());
            auto sni = try_canonicalize_domain(j.at("sni").get_ref<const std::string&>());
            if (!server || !sni) return std::nullopt;
            ev.payload = SslObservation{*server, std::move(*sni)};
        } else {
            return std::nullopt;
        }
        return ev;
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

EventReadCounters read_events_jsonl(std::istream& in, const std::function<void(TrafficEvent&&)>& sink) {
    EventReadCounters counters;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        ++counters.lines;
        if (auto ev = parse_event_line(line)) {
            ++counters.events;
            sink(std::move(*ev));
        } else {
            ++counters.skipped;
        }
    }
    return counters;
}

void write_events_jsonl(std::ostream& out, const TrafficEvent& ev) {
    out << event_to_json_line(ev) << '\n';
}

}  // namespace bindwatch
