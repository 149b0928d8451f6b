#include "bindwatch/wire.hpp"

#include <algorithm>

#include "byte_reader.hpp"

namespace bindwatch {

namespace {

using detail::ByteReader;
using Kind = TlsParseError::Kind;

constexpr std::uint8_t kContentHandshake = 0x16;
constexpr std::uint8_t kHandshakeClientHello = 0x01;
constexpr std::uint16_t kExtServerName = 0x0000;
constexpr std::uint8_t kNameTypeHost = 0x00;

[[noreturn]] void fail(Kind kind, const char* what) {
    throw TlsParseError(kind, std::string("tls: ") + what);
}

}  // namespace

bool looks_like_tls_handshake(Bytes payload) noexcept {
    return payload.size() >= 3 && payload[0] == kContentHandshake && payload[1] == 0x03;
}

DomainName extract_sni(Bytes record) {
    ByteReader rec(record);
    auto content_type = rec.u8();
    auto version = rec.u16();
    auto length = rec.u16();
    if (!content_type || !version || !length) fail(Kind::Malformed, "short record header");
    if (*content_type != kContentHandshake) fail(Kind::NotClientHello, "not a handshake record");
    auto fragment = rec.take(std::min<std::size_t>(*length, rec.remaining()));

    ByteReader hs(*fragment);
    auto hs_type = hs.u8();
    if (!hs_type) fail(Kind::Malformed, "empty handshake");
    if (*hs_type != kHandshakeClientHello) fail(Kind::NotClientHello, "handshake is not ClientHello");
    auto hs_len = hs.u24();
    auto client_version = hs.u16();
    if (!hs_len || !client_version || !hs.skip(32)) fail(Kind::Malformed, "truncated ClientHello");

    auto session_len = hs.u8();
    if (!session_len || !hs.skip(*session_len)) fail(Kind::Malformed, "truncated session id");
    auto suites_len = hs.u16();
    if (!suites_len || !hs.skip(*suites_len)) fail(Kind::Malformed, "truncated cipher suites");
    auto comp_len = hs.u8();
    if (!comp_len || !hs.skip(*comp_len)) fail(Kind::Malformed, "truncated compression methods");
    if (hs.remaining() == 0) fail(Kind::NoSni, "no extensions");

    auto ext_total = hs.u16();
    if (!ext_total) fail(Kind::Malformed, "truncated extensions length");
    auto ext_block = hs.take(*ext_total);
    if (!ext_block) fail(Kind::Malformed, "extensions run past record");

    ByteReader exts(*ext_block);
    while (exts.remaining() > 0) {
        auto type = exts.u16();
        auto len = exts.u16();
        if (!type || !len) fail(Kind::Malformed, "truncated extension header");
        auto body = exts.take(*len);
        if (!body) fail(Kind::Malformed, "extension runs past block");
        if (*type != kExtServerName) continue;

        ByteReader sni(*body);
        auto list_len = sni.u16();
        if (!list_len) fail(Kind::Malformed, "truncated server_name list");
        auto list = sni.take(*list_len);
        if (!list) fail(Kind::Malformed, "server_name list runs past extension");
        ByteReader entries(*list);
        while (entries.remaining() > 0) {
            auto name_type = entries.u8();
            auto name_len = entries.u16();
            if (!name_type || !name_len) fail(Kind::Malformed, "truncated server_name entry");
            auto name = entries.take(*name_len);
            if (!name) fail(Kind::Malformed, "server_name entry runs past list");
            if (*name_type != kNameTypeHost) continue;
            auto host = try_canonicalize_domain(as_chars(*name));
            if (!host) fail(Kind::Malformed, "host_name is not a domain name");
            return *host;
        }
        fail(Kind::NoSni, "server_name has no host_name entry");
    }
    fail(Kind::NoSni, "no server_name extension");
}

}  // namespace bindwatch
