#include "bindwatch/service_api.hpp"

#include <algorithm>
#include <charconv>
#include <mutex>
#include <thread>
#include <tuple>

#include <httplib.h>
#include <json.hpp>

#include "bindwatch/events_io.hpp"

namespace bindwatch {

using nlohmann::json;

namespace {

struct ApiFailure {
    int status;
    std::string code;
    std::string message;
};

ApiResponse error_response(int status, std::string_view code, std::string_view message) {
    json j{{"error", {{"code", code}, {"message", message}}}};
    return {status, j.dump(-1, ' ', false, json::error_handler_t::replace)};
}

ApiResponse ok(int status, const json& j) { return {status, j.dump(-1, ' ', false, json::error_handler_t::replace)}; }

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json state_json(const PossibilityState& st) {
    json protos = json::array();
    for (Proto p : {Proto::ssl, Proto::dns, Proto::http}) {
        if (st.seen(p)) protos.push_back(to_string(p));
    }
    return json{{"ip", st.key.ip.to_string()},
                {"domain", st.key.domain.str()},
                {"possibility", st.p},
                {"status", to_string(st.status)},
                {"sightings", st.sightings},
                {"protocols", protos},
                {"first_seen_ts", st.first_seen_ts},
                {"last_seen_day", st.last_seen_day},
                {"last_probe_ts", optional_number(st.last_probe_ts)},
                {"verified_until", optional_number(st.verified_until)},
                {"rejected_until", optional_number(st.rejected_until)}};
}

json watch_json(const WatchlistEntry& e) {
    json j{{"kind", to_string(e.spec.kind)},
           {"value", e.spec.value},
           {"source", to_string(e.spec.source)},
           {"created_ts", e.created_ts}};
    if (e.origin_key) j["origin"] = {{"ip", e.origin_key->ip.to_string()}, {"domain", e.origin_key->domain.str()}};
    return j;
}

json review_json(const ReviewItem& r) {
    return json{{"id", r.id},
                {"ip", r.key.ip.to_string()},
                {"domain", r.key.domain.str()},
                {"evidence_summary",
                 {{"ssl", r.evidence.ssl}, {"dns", r.evidence.dns}, {"http", r.evidence.http}, {"p", r.evidence.p}}},
                {"page_excerpt", r.page_excerpt},
                {"dist", r.dist ? json(*r.dist) : json(nullptr)},
                {"created_ts", r.created_ts}};
}

json parse_body(const std::string& body) {
    try {
        json j = json::parse(body);
        if (!j.is_object()) throw ApiFailure{400, "bad_request", "body must be a JSON object"};
        return j;
    } catch (const json::exception& e) {
        throw ApiFailure{400, "bad_request", std::string("malformed JSON: ") + e.what()};
    }
}

std::string string_field(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw ApiFailure{400, "bad_request", std::string("missing string field ") + key};
    return it->get<std::string>();
}

std::string encode_cursor(const CandidateKey& key) { return base64_encode(key.domain.str() + " " + key.ip.to_string()); }

CandidateKey decode_cursor(const std::string& text) {
    auto raw = base64_decode(text);
    if (raw) {
        auto sp = raw->find(' ');
        if (sp != std::string::npos) {
            auto domain = try_canonicalize_domain(std::string_view(*raw).substr(0, sp));
            auto ip = IpAddr::try_parse(std::string_view(*raw).substr(sp + 1));
            if (domain && ip) return {*ip, *domain};
        }
    }
    throw ApiFailure{400, "bad_request", "invalid cursor"};
}

bool after(const PossibilityState& st, const CandidateKey& cursor) {
    return std::tie(st.key.domain, st.key.ip) > std::tie(cursor.domain, cursor.ip);
}

}  // namespace

ApiResponse ApiService::handle(const ApiRequest& req) {
    try {
        return route(req);
    } catch (const ApiFailure& f) {
        return error_response(f.status, f.code, f.message);
    } catch (const NotFound& e) {
        return error_response(404, "not_found", e.what());
    } catch (const AlreadyResolved& e) {
        return error_response(409, "conflict", e.what());
    } catch (const InvalidVerdict& e) {
        return error_response(400, "bad_request", e.what());
    } catch (const InvalidSpec& e) {
        return error_response(400, "bad_request", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal", e.what());
    }
}

ApiResponse ApiService::route(const ApiRequest& req) {
    const std::string& path = req.path;
    bool get = req.method == "GET";
    bool post = req.method == "POST";

    if (post) {
        const auto& token = store_.config().api_token;
        if (token.empty() || req.authorization != "Bearer " + token) {
            return error_response(401, "unauthorized", "missing or wrong bearer token");
        }
    }

    if (get && path == "/api/pairs") {
        CandidateFilter filter;
        if (auto it = req.query.find("domain"); it != req.query.end() && !it->second.empty()) {
            auto d = try_canonicalize_domain(it->second);
            if (!d) throw ApiFailure{400, "bad_request", "invalid domain"};
            filter.domain = *d;
        }
        if (auto it = req.query.find("status"); it != req.query.end() && !it->second.empty()) {
            auto s = status_from_string(it->second);
            if (!s) throw ApiFailure{400, "bad_request", "invalid status"};
            filter.status = *s;
        }
        if (auto it = req.query.find("min_possibility"); it != req.query.end() && !it->second.empty()) {
            double v = 0.0;
            const auto& text = it->second;
            auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc() || end != text.data() + text.size() || v < 0.0 || v > 1.0) {
                throw ApiFailure{400, "bad_request", "min_possibility must be in [0,1]"};
            }
            filter.min_p = v;
        }
        std::optional<CandidateKey> cursor;
        if (auto it = req.query.find("cursor"); it != req.query.end() && !it->second.empty()) {
            cursor = decode_cursor(it->second);
        }
        auto states = store_.list_candidates(filter);
        auto begin = states.begin();
        if (cursor) begin = std::find_if(states.begin(), states.end(), [&](const auto& st) { return after(st, *cursor); });
        json items = json::array();
        auto it = begin;
        for (; it != states.end() && items.size() < kPageSize; ++it) items.push_back(state_json(*it));
        json next = nullptr;
        if (it != states.end()) next = encode_cursor(std::prev(it)->key);
        return ok(200, json{{"items", items}, {"next_cursor", next}});
    }

    if (get && path == "/api/pairs/verified") {
        json items = json::array();
        for (const auto& e : store_.publish_list()) items.push_back(json::parse(published_to_json_line(e)));
        return ok(200, items);
    }

    if (post && path == "/api/watchlist") {
        json body = parse_body(req.body);
        auto kind = spec_kind_from_string(string_field(body, "kind"));
        if (!kind) throw ApiFailure{400, "bad_request", "kind must be domain, ip or regex"};
        auto result = store_.add_user_string(make_specific_string(*kind, string_field(body, "value"), SpecSource::user));
        store_.flush();
        json j = watch_json(result.entry);
        j["created"] = result.created;
        return ok(result.created ? 201 : 200, j);
    }

    if (get && path == "/api/review/queue") {
        json items = json::array();
        for (const auto& r : store_.pending_reviews()) items.push_back(review_json(r));
        return ok(200, items);
    }

    constexpr std::string_view review_prefix = "/api/review/";
    constexpr std::string_view verdict_suffix = "/verdict";
    if (post && path.starts_with(review_prefix) && path.ends_with(verdict_suffix) &&
        path.size() > review_prefix.size() + verdict_suffix.size()) {
        std::string id = path.substr(review_prefix.size(), path.size() - review_prefix.size() - verdict_suffix.size());
        json body = parse_body(req.body);
        std::string text = string_field(body, "verdict");
        VerdictValue value;
        if (text == "correct") value = VerdictValue::Correct;
        else if (text == "incorrect") value = VerdictValue::Incorrect;
        else throw ApiFailure{400, "bad_request", "verdict must be correct or incorrect"};
        auto st = store_.apply_human_verdict(id, value);
        store_.flush();
        return ok(200, state_json(st));
    }

    if (get && path == "/api/stats") {
        auto c = store_.counters();
        double now = store_.now();
        auto published = store_.publish_list(now);
        auto verified = std::count_if(published.begin(), published.end(),
                                      [](const PublishedEntry& e) { return e.status == Status::Verified; });
        return ok(200, json{{"events_ingested", c.events_ingested},
                            {"hits", c.hits},
                            {"filtered_cdn", c.filtered_cdn},
                            {"filtered_url", c.filtered_url},
                            {"published", published.size()},
                            {"verified", verified},
                            {"review_pending", store_.pending_reviews().size()}});
    }

    return error_response(404, "not_found", "no route for " + req.method + " " + path);
}

// ------------------------------------------------------------- server

struct ApiServer::Impl {
    ApiService service;
    httplib::Server server;
    std::thread thread;
    std::mutex stop_mutex;
    bool stopped = false;

    explicit Impl(Store& store) : service(store) {}
};

namespace {

void dispatch(ApiService& service, const httplib::Request& req, httplib::Response& res) {
    ApiRequest api;
    api.method = req.method;
    api.path = req.path;
    for (const auto& [k, v] : req.params) api.query.emplace(k, v);
    api.body = req.body;
    api.authorization = req.get_header_value("Authorization");
    ApiResponse out = service.handle(api);
    res.status = out.status;
    res.set_content(out.body, "application/json");
}

}  // namespace

ApiServer::ApiServer(Store& store, const std::string& host, int port) : impl_(std::make_unique<Impl>(store)) {
    Impl* impl = impl_.get();
    auto handler = [impl](const httplib::Request& req, httplib::Response& res) { dispatch(impl->service, req, res); };
    impl->server.Get(R"(/api/.*)", handler);
    impl->server.Post(R"(/api/.*)", handler);
    // Plain SO_REUSEADDR: a port already in use must fail with BindFailure.
    impl->server.set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    if (port == 0) {
        port_ = impl->server.bind_to_any_port(host);
    } else {
        port_ = impl->server.bind_to_port(host, port) ? port : -1;
    }
    if (port_ <= 0) throw BindFailure("cannot listen on " + host + ":" + std::to_string(port));
    impl->thread = std::thread([impl] { impl->server.listen_after_bind(); });
    impl->server.wait_until_ready();
}

ApiServer::~ApiServer() {
    stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

void ApiServer::stop() {
    std::lock_guard lock(impl_->stop_mutex);
    if (impl_->stopped) return;
    impl_->stopped = true;
    impl_->server.stop();
}

void ApiServer::wait() {
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::pair<std::string, int> parse_listen_addr(const std::string& text) {
    std::string host;
    std::string port_text;
    if (text.starts_with("[")) {
        auto close = text.find(']');
        if (close == std::string::npos || close + 1 >= text.size() || text[close + 1] != ':') {
            throw ConfigInvalid("listen address: " + text);
        }
        host = text.substr(1, close - 1);
        port_text = text.substr(close + 2);
    } else {
        auto colon = text.rfind(':');
        if (colon == std::string::npos) throw ConfigInvalid("listen address: " + text);
        host = text.substr(0, colon);
        port_text = text.substr(colon + 1);
    }
    if (host.empty()) host = "0.0.0.0";
    int port = -1;
    auto [end, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc() || end != port_text.data() + port_text.size() || port < 0 || port > 65535) {
        throw ConfigInvalid("listen address port: " + text);
    }
    return {host, port};
}

}  // namespace bindwatch
