#include "bindwatch/match_filter.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>

#include <json.hpp>

namespace bindwatch {

std::string_view to_string(SpecKind kind) noexcept {
    switch (kind) {
        case SpecKind::domain: return "domain";
        case SpecKind::ip: return "ip";
        case SpecKind::regex: return "regex";
    }
    return "?";
}

std::string_view to_string(SpecSource source) noexcept {
    return source == SpecSource::user ? "user" : "auto";
}

std::optional<SpecKind> spec_kind_from_string(std::string_view text) noexcept {
    if (text == "domain") return SpecKind::domain;
    if (text == "ip") return SpecKind::ip;
    if (text == "regex") return SpecKind::regex;
    return std::nullopt;
}

std::optional<SpecSource> spec_source_from_string(std::string_view text) noexcept {
    if (text == "user") return SpecSource::user;
    if (text == "auto") return SpecSource::automatic;
    return std::nullopt;
}

std::string_view to_string(UrlClass cls) noexcept {
    switch (cls) {
        case UrlClass::Homepage: return "homepage";
        case UrlClass::NonHomepage: return "non_homepage";
        case UrlClass::Unknown: return "unknown";
    }
    return "?";
}

SpecificString make_specific_string(SpecKind kind, std::string_view value, SpecSource source) {
    SpecificString spec{kind, {}, source};
    switch (kind) {
        case SpecKind::domain: {
            auto name = try_canonicalize_domain(value);
            if (!name) throw InvalidSpec("invalid domain spec '" + std::string(value) + "'");
            spec.value = name->str();
            break;
        }
        case SpecKind::ip: {
            auto ip = IpAddr::try_parse(value);
            if (!ip) throw InvalidSpec("invalid ip spec '" + std::string(value) + "'");
            spec.value = ip->to_string();
            break;
        }
        case SpecKind::regex:
            if (value.empty()) throw InvalidSpec("empty regex spec");
            try {
                std::regex compiled{std::string(value)};
            } catch (const std::regex_error& e) {
                throw InvalidSpec("invalid regex spec '" + std::string(value) + "': " + e.what());
            }
            spec.value = std::string(value);
            break;
    }
    if (source == SpecSource::automatic && kind != SpecKind::ip) {
        throw InvalidSpec("auto-generated specs must be ip strings");
    }
    return spec;
}

bool matches_domain(std::string_view spec_domain, const DomainName& name) noexcept {
    std::string_view n = name.str();
    if (spec_domain.empty() || n.size() < spec_domain.size()) return false;
    if (!n.ends_with(spec_domain)) return false;
    return n.size() == spec_domain.size() || n[n.size() - spec_domain.size() - 1] == '.';
}

bool matches_domain(const SpecificString& spec, const DomainName& name) noexcept {
    return spec.kind == SpecKind::domain && matches_domain(spec.value, name);
}

// ------------------------------------------------------------- Matcher

Matcher::Matcher(std::span<const SpecificString> specs) {
    for (const auto& spec : specs) add(spec);
}

void Matcher::add(const SpecificString& spec) {
    switch (spec.kind) {
        case SpecKind::domain: domains_.insert(spec.value); break;
        case SpecKind::ip:
            if (auto ip = IpAddr::try_parse(spec.value)) ips_.insert(*ip);
            break;
        case SpecKind::regex: {
            auto exists = std::any_of(regexes_.begin(), regexes_.end(),
                                      [&](const auto& r) { return r.first == spec.value; });
            if (!exists) regexes_.emplace_back(spec.value, std::make_shared<const std::regex>(spec.value));
            break;
        }
    }
}

void Matcher::remove(const SpecificString& spec) {
    switch (spec.kind) {
        case SpecKind::domain: domains_.erase(spec.value); break;
        case SpecKind::ip:
            if (auto ip = IpAddr::try_parse(spec.value)) ips_.erase(*ip);
            break;
        case SpecKind::regex:
            std::erase_if(regexes_, [&](const auto& r) { return r.first == spec.value; });
            break;
    }
}

bool Matcher::name_matches(const DomainName& name) const {
    if (!domains_.empty()) {
        std::string_view rest = name.str();
        for (;;) {
            if (domains_.find(std::string(rest)) != domains_.end()) return true;
            auto dot = rest.find('.');
            if (dot == std::string_view::npos) break;
            rest.remove_prefix(dot + 1);
        }
    }
    for (const auto& [pattern, re] : regexes_) {
        if (std::regex_search(name.str(), *re)) return true;
    }
    return false;
}

std::vector<DomainName> cname_chain(const DnsObservation& obs) {
    std::vector<DomainName> chain;
    const DomainName* current = &obs.qname;
    for (std::size_t step = 0; step < obs.answers.size(); ++step) {
        auto it = std::find_if(obs.answers.begin(), obs.answers.end(), [&](const DnsRecord& rr) {
            return rr.rtype == RType::CNAME && rr.name == *current;
        });
        if (it == obs.answers.end()) break;
        const auto& target = std::get<DomainName>(it->data);
        if (std::find(chain.begin(), chain.end(), target) != chain.end() || target == obs.qname) break;
        chain.push_back(target);
        current = &chain.back();
    }
    return chain;
}

std::vector<MatchHit> Matcher::match(const TrafficEvent& event) const {
    std::vector<MatchHit> hits;
    std::visit(
        [&](const auto& obs) {
            using T = std::decay_t<decltype(obs)>;
            if constexpr (std::is_same_v<T, DnsObservation>) {
                bool name_hit = name_matches(obs.qname);
                std::vector<DomainName> chain;
                bool chain_built = false;
                for (const auto& rr : obs.answers) {
                    if (rr.rtype == RType::CNAME) continue;
                    const auto& addr = std::get<IpAddr>(rr.data);
                    if (!name_hit && !ips_.contains(addr)) continue;
                    CandidateKey key{addr, obs.qname};
                    auto dup = std::any_of(hits.begin(), hits.end(), [&](const MatchHit& h) { return h.key == key; });
                    if (dup) continue;
                    if (!chain_built) {
                        chain = cname_chain(obs);
                        chain_built = true;
                    }
                    MatchHit hit;
                    hit.key = std::move(key);
                    hit.proto = Proto::dns;
                    hit.ts = event.ts;
                    hit.cname_chain = chain;
                    hits.push_back(std::move(hit));
                }
            } else if constexpr (std::is_same_v<T, HttpObservation>) {
                if (!name_matches(obs.host) && !ips_.contains(obs.server_ip)) return;
                MatchHit hit;
                hit.key = CandidateKey{obs.server_ip, obs.host};
                hit.proto = Proto::http;
                hit.ts = event.ts;
                hit.http = HttpDetail{obs.url_path, obs.status, obs.body};
                hits.push_back(std::move(hit));
            } else {
                if (!name_matches(obs.sni) && !ips_.contains(obs.server_ip)) return;
                MatchHit hit;
                hit.key = CandidateKey{obs.server_ip, obs.sni};
                hit.proto = Proto::ssl;
                hit.ts = event.ts;
                hits.push_back(std::move(hit));
            }
        },
        event.payload);
    return hits;
}

std::vector<MatchHit> match_event(std::span<const SpecificString> watchlist, const TrafficEvent& event) {
    return Matcher(watchlist).match(event);
}

// ------------------------------------------------------------- filters

const FilterFeatures& FilterFeatures::defaults() {
    static const FilterFeatures features{
        {"akamai", "akadns", "edgesuite", "edgekey", "cloudfront", "amazon", "chinacache", "cloudflare",
         "edgecast", "fastly", "cdntip", "dnsv1", "passvpn", "a-msedge1"},
        {"edge", "incap"},
        {"exe", "zip", "rar", "jpg", "jpeg", "png", "gif", "css", "js", "ico", "svg", "mp4", "mp3", "pdf",
         "apk", "gz", "tar"},
    };
    return features;
}

FilterFeatures FilterFeatures::parse(std::string_view json_text) {
    using nlohmann::json;
    FilterFeatures out = defaults();
    try {
        json doc = json::parse(json_text);
        if (!doc.is_object()) throw ConfigInvalid("filter features must be a JSON object");
        auto lowered = [](std::vector<std::string> v) {
            for (auto& s : v) std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
            return v;
        };
        for (const auto& [key, value] : doc.items()) {
            if (key == "cdn_substrings") out.cdn_substrings = lowered(value.get<std::vector<std::string>>());
            else if (key == "cdn_tokens") out.cdn_tokens = lowered(value.get<std::vector<std::string>>());
            else if (key == "nontext_suffixes") out.nontext_suffixes = lowered(value.get<std::vector<std::string>>());
            else throw ConfigInvalid("unknown key " + key);
        }
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("filter features: ") + e.what());
    }
    return out;
}

FilterFeatures FilterFeatures::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigInvalid("cannot open " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse(text.str());
}

namespace {

bool name_has_cdn_feature(std::string_view name, const FilterFeatures& features) {
    for (const auto& feature : features.cdn_substrings) {
        if (name.find(feature) != std::string_view::npos) return true;
    }
    if (features.cdn_tokens.empty()) return false;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= name.size(); ++i) {
        if (i == name.size() || name[i] == '.' || name[i] == '-') {
            std::string_view token = name.substr(start, i - start);
            for (const auto& feature : features.cdn_tokens) {
                if (token == feature) return true;
            }
            start = i + 1;
        }
    }
    return false;
}

bool is_alpha(char c) noexcept { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) noexcept { return c >= '0' && c <= '9'; }

// letters*, then at least four digits, then ".suffix"
bool numbered_document(std::string_view seg) noexcept {
    std::size_t i = 0;
    while (i < seg.size() && is_alpha(seg[i])) ++i;
    std::size_t digits = 0;
    while (i < seg.size() && is_digit(seg[i])) {
        ++i;
        ++digits;
    }
    if (digits < 4 || i >= seg.size() || seg[i] != '.') return false;
    ++i;
    if (i == seg.size()) return false;
    return std::all_of(seg.begin() + static_cast<std::ptrdiff_t>(i), seg.end(),
                       [](char c) { return is_alpha(c) || is_digit(c); });
}

bool index_document(std::string_view seg) noexcept {
    static constexpr std::string_view kIndexSuffixes[] = {"html", "htm", "php", "asp", "aspx", "jsp", "shtml"};
    if (!seg.starts_with("index.")) return false;
    seg.remove_prefix(6);
    return std::find(std::begin(kIndexSuffixes), std::end(kIndexSuffixes), seg) != std::end(kIndexSuffixes);
}

std::size_t count_parameters(std::string_view query) noexcept {
    std::size_t count = 0;
    while (!query.empty()) {
        auto amp = query.find('&');
        std::string_view param = query.substr(0, amp);
        auto eq = param.find('=');
        if (eq != std::string_view::npos && eq > 0) ++count;
        if (amp == std::string_view::npos) break;
        query.remove_prefix(amp + 1);
    }
    return count;
}

}  // namespace

bool cdn_filter(std::span<const DomainName> chain, const FilterFeatures& features) {
    return std::any_of(chain.begin(), chain.end(),
                       [&](const DomainName& name) { return name_has_cdn_feature(name.str(), features); });
}

UrlClass url_classify(std::string_view url_path, const DomainName& host, const FilterFeatures& features) {
    std::string url(url_path);
    std::transform(url.begin(), url.end(), url.begin(), [](unsigned char c) { return std::tolower(c); });
    std::string_view full = url;

    auto frag = full.find('#');
    auto query_at = full.substr(0, frag).find('?');
    std::string_view path = full.substr(0, std::min(frag, query_at));
    std::string_view query;
    if (query_at != std::string_view::npos) {
        query = full.substr(query_at + 1, frag == std::string_view::npos ? std::string_view::npos : frag - query_at - 1);
    }
    std::string_view last_seg = path.substr(path.rfind('/') == std::string_view::npos ? 0 : path.rfind('/') + 1);
    std::string_view ext;
    if (auto dot = last_seg.rfind('.'); dot != std::string_view::npos) ext = last_seg.substr(dot + 1);

    // Non-homepage patterns take precedence.
    if (!ext.empty() && std::find(features.nontext_suffixes.begin(), features.nontext_suffixes.end(), ext) !=
                            features.nontext_suffixes.end()) {
        return UrlClass::NonHomepage;
    }
    if (numbered_document(last_seg)) return UrlClass::NonHomepage;
    if (full.find("redirect") != std::string_view::npos) return UrlClass::NonHomepage;
    if (count_parameters(query) >= 3) return UrlClass::NonHomepage;
    if (host.str().size() + url_path.size() > 50) return UrlClass::NonHomepage;

    if (full.empty() || full == "/") return UrlClass::Homepage;
    std::string_view after_root = full.starts_with("/") ? full.substr(1) : full;
    auto significant = std::count_if(after_root.begin(), after_root.end(), [](char c) { return c != '/' && c != '#'; });
    if (significant < 5) return UrlClass::Homepage;
    if (index_document(last_seg)) return UrlClass::Homepage;
    return UrlClass::Unknown;
}

void CdnIpSet::insert(const IpAddr& ip) {
    std::unique_lock lock(mutex_);
    if (auto it = index_.find(ip); it != index_.end()) {
        order_.splice(order_.end(), order_, it->second);
        if (hook_) hook_(ip);
        return;
    }
    order_.push_back(ip);
    index_.emplace(ip, std::prev(order_.end()));
    if (hook_) hook_(ip);
    while (order_.size() > capacity_) {
        index_.erase(order_.front());
        order_.pop_front();
    }
}

void CdnIpSet::clear() {
    std::unique_lock lock(mutex_);
    order_.clear();
    index_.clear();
}

bool CdnIpSet::contains(const IpAddr& ip) const {
    std::shared_lock lock(mutex_);
    return index_.contains(ip);
}

std::size_t CdnIpSet::size() const {
    std::shared_lock lock(mutex_);
    return order_.size();
}

std::vector<IpAddr> CdnIpSet::items() const {
    std::shared_lock lock(mutex_);
    return {order_.begin(), order_.end()};
}

std::vector<MatchHit> filter_hits(std::vector<MatchHit> hits, CdnIpSet& cdn_ips, const FilterFeatures& features,
                                  FilterCounters* counters) {
    FilterCounters local;
    std::vector<MatchHit> kept;
    kept.reserve(hits.size());
    for (auto& hit : hits) {
        switch (hit.proto) {
            case Proto::dns:
                if (!hit.cname_chain.empty() && cdn_filter(hit.cname_chain, features)) {
                    cdn_ips.insert(hit.key.ip);
                    ++local.filtered_cdn;
                    continue;
                }
                break;
            case Proto::http: {
                if (cdn_ips.contains(hit.key.ip)) {
                    ++local.filtered_cdn;
                    continue;
                }
                std::string_view path = hit.http ? std::string_view(hit.http->url_path) : std::string_view{};
                UrlClass cls = url_classify(path, hit.key.domain, features);
                if (cls == UrlClass::NonHomepage) {
                    ++local.filtered_url;
                    continue;
                }
                hit.url_class = cls;
                break;
            }
            case Proto::ssl:
                break;
        }
        kept.push_back(std::move(hit));
    }
    if (counters) {
        counters->filtered_cdn += local.filtered_cdn;
        counters->filtered_url += local.filtered_url;
    }
    return kept;
}

}  // namespace bindwatch
