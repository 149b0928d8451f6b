#include "bindwatch/wire.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

namespace bindwatch {

namespace {

using Kind = HttpParseError::Kind;

constexpr std::string_view kCrlf = "\r\n";
constexpr std::string_view kHeaderEnd = "\r\n\r\n";

bool iequals(std::string_view a, std::string_view b) noexcept {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
           });
}

std::string_view trim(std::string_view s) noexcept {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

bool is_method_token(std::string_view m) noexcept {
    if (m.empty() || m.size() > 16) return false;
    return std::all_of(m.begin(), m.end(), [](char c) { return (c >= 'A' && c <= 'Z') || c == '-'; });
}

bool is_http1_version(std::string_view v) noexcept {
    return v.size() == 8 && v.substr(0, 7) == "HTTP/1." && (v[7] == '0' || v[7] == '1');
}

// Header lines between the start line and the blank line.
template <typename Fn>
void for_each_header(std::string_view headers, Fn&& fn) {
    while (!headers.empty()) {
        auto eol = headers.find(kCrlf);
        std::string_view line = headers.substr(0, eol);
        auto colon = line.find(':');
        if (colon != std::string_view::npos) fn(trim(line.substr(0, colon)), trim(line.substr(colon + 1)));
        if (eol == std::string_view::npos) break;
        headers.remove_prefix(eol + 2);
    }
}

int hex_value(char c) noexcept {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string percent_decode(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%' && i + 2 < s.size() && hex_value(s[i + 1]) >= 0 && hex_value(s[i + 2]) >= 0) {
            out.push_back(static_cast<char>(hex_value(s[i + 1]) * 16 + hex_value(s[i + 2])));
            i += 2;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

// Request target to url_path: origin-form kept, absolute-form reduced to its
// path, anything else (authority-form, "*") becomes empty.
std::string normalize_target(std::string_view target) {
    if (target.starts_with("http://") || target.starts_with("https://")) {
        auto after_scheme = target.find("//") + 2;
        auto slash = target.find('/', after_scheme);
        target = slash == std::string_view::npos ? std::string_view{} : target.substr(slash);
    }
    if (!target.starts_with("/")) return {};
    auto query = target.find_first_of("?#");
    std::string out = percent_decode(target.substr(0, query));
    if (query != std::string_view::npos) out.append(target.substr(query));
    return out;
}

std::string dechunk(std::string_view body) {
    std::string out;
    while (!body.empty() && out.size() < kMaxBodyBytes) {
        auto eol = body.find(kCrlf);
        if (eol == std::string_view::npos) break;
        std::string_view size_field = body.substr(0, eol);
        if (auto semi = size_field.find(';'); semi != std::string_view::npos) size_field = size_field.substr(0, semi);
        size_field = trim(size_field);
        std::size_t chunk = 0;
        auto [ptr, ec] = std::from_chars(size_field.data(), size_field.data() + size_field.size(), chunk, 16);
        if (ec != std::errc() || ptr != size_field.data() + size_field.size() || chunk == 0) break;
        body.remove_prefix(eol + 2);
        std::size_t take = std::min(chunk, body.size());
        out.append(body.substr(0, take));
        if (take < chunk || body.size() < take + 2) break;
        body.remove_prefix(take + 2);
    }
    if (out.size() > kMaxBodyBytes) out.resize(kMaxBodyBytes);
    return out;
}

}  // namespace

bool looks_like_http_request(Bytes payload) noexcept {
    std::string_view s = as_chars(payload).substr(0, 24);
    auto sp = s.find(' ');
    return sp != std::string_view::npos && sp > 0 && is_method_token(s.substr(0, sp));
}

bool looks_like_http_response(Bytes payload) noexcept {
    return as_chars(payload).starts_with("HTTP/1.");
}

HttpRequest parse_http_request(Bytes segment) {
    std::string_view text = as_chars(segment);
    auto eol = text.find(kCrlf);
    if (eol == std::string_view::npos) throw HttpParseError(Kind::NotHttp, "http: no CRLF-terminated start line");
    std::string_view start = text.substr(0, eol);
    auto sp1 = start.find(' ');
    auto sp2 = start.rfind(' ');
    if (sp1 == std::string_view::npos || sp2 == sp1) throw HttpParseError(Kind::NotHttp, "http: bad request line");
    std::string_view method = start.substr(0, sp1);
    std::string_view target = start.substr(sp1 + 1, sp2 - sp1 - 1);
    std::string_view version = start.substr(sp2 + 1);
    if (!is_method_token(method) || !is_http1_version(version) || target.empty()) {
        throw HttpParseError(Kind::NotHttp, "http: bad request line");
    }

    auto end = text.find(kHeaderEnd, eol);
    std::string_view headers;
    if (end == std::string_view::npos) {
        // A lone start line with CRLF is a complete HTTP/1.0 request without headers.
        if (text.size() != eol + 2) throw HttpParseError(Kind::Incomplete, "http: header block not terminated in segment");
    } else {
        if (end > eol) headers = text.substr(eol + 2, end - eol - 2);
    }

    std::optional<std::string_view> host_value;
    for_each_header(headers, [&](std::string_view name, std::string_view value) {
        if (!host_value && iequals(name, "host")) host_value = value;
    });
    if (!host_value || host_value->empty()) throw HttpParseError(Kind::MissingHost, "http: missing Host header");

    std::string_view host = *host_value;
    if (!host.empty() && host.front() != '[') {
        if (auto colon = host.rfind(':'); colon != std::string_view::npos) host = host.substr(0, colon);
    }
    auto host_name = try_canonicalize_domain(host);
    if (!host_name) throw HttpParseError(Kind::MissingHost, "http: Host is not a domain name");

    return HttpRequest{std::string(method), std::move(*host_name), normalize_target(target)};
}

HttpResponse parse_http_response(Bytes segment) {
    std::string_view text = as_chars(segment);
    auto eol = text.find(kCrlf);
    if (eol == std::string_view::npos) throw HttpParseError(Kind::NotHttp, "http: no CRLF-terminated status line");
    std::string_view start = text.substr(0, eol);
    if (start.size() < 12 || !is_http1_version(start.substr(0, 8)) || start[8] != ' ') {
        throw HttpParseError(Kind::NotHttp, "http: bad status line");
    }
    int status = 0;
    auto [ptr, ec] = std::from_chars(start.data() + 9, start.data() + 12, status);
    if (ec != std::errc() || ptr != start.data() + 12 || status < 100 || status > 599 ||
        (start.size() > 12 && start[12] != ' ')) {
        throw HttpParseError(Kind::NotHttp, "http: bad status code");
    }

    HttpResponse resp;
    resp.status = status;
    auto end = text.find(kHeaderEnd, eol);
    if (end == std::string_view::npos) return resp;

    std::optional<std::size_t> content_length;
    bool chunked = false;
    std::string_view headers = end > eol ? text.substr(eol + 2, end - eol - 2) : std::string_view{};
    for_each_header(headers, [&](std::string_view name, std::string_view value) {
        if (iequals(name, "content-length")) {
            std::size_t n = 0;
            auto [p, e] = std::from_chars(value.data(), value.data() + value.size(), n);
            if (e == std::errc() && p == value.data() + value.size()) content_length = n;
        } else if (iequals(name, "transfer-encoding")) {
            chunked = value.find("chunked") != std::string_view::npos;
        }
    });

    std::string_view body = text.substr(end + 4);
    if (chunked) {
        resp.body = dechunk(body);
        return resp;
    }
    std::size_t take = body.size();
    if (content_length) take = std::min(take, *content_length);
    take = std::min(take, kMaxBodyBytes);
    resp.body.assign(body.substr(0, take));
    return resp;
}

}  // namespace bindwatch
