#include "bindwatch/wire.hpp"

#include <algorithm>
#include <array>

#include "byte_reader.hpp"

namespace bindwatch {

namespace {

using detail::ByteReader;

[[noreturn]] void malformed(const char* what) {
    throw DnsMalformed(std::string("dns: ") + what);
}

// Reads a possibly compressed name starting at `offset`. On return `offset`
// points just past the name's in-place encoding. `printable` is cleared when
// a label holds bytes that cannot form a host name; the caller decides
// whether that is fatal.
std::string read_name(Bytes msg, std::size_t& offset, bool& printable) {
    std::string name;
    printable = true;
    std::size_t pos = offset;
    std::size_t wire_len = 0;
    int jumps = 0;
    bool jumped = false;
    for (;;) {
        if (pos >= msg.size()) malformed("name runs past message");
        std::uint8_t len = msg[pos];
        if ((len & 0xC0) == 0xC0) {
            if (pos + 1 >= msg.size()) malformed("truncated compression pointer");
            if (++jumps > kMaxCompressionJumps) malformed("compression pointer loop");
            std::size_t target = static_cast<std::size_t>((len & 0x3F) << 8) | msg[pos + 1];
            if (!jumped) offset = pos + 2;
            jumped = true;
            pos = target;
            continue;
        }
        if ((len & 0xC0) != 0) malformed("reserved label type");
        if (len == 0) {
            if (!jumped) offset = pos + 1;
            break;
        }
        if (pos + 1 + len > msg.size()) malformed("label runs past message");
        wire_len += len + 1;
        if (wire_len > 255) malformed("name longer than 255 octets");
        if (!name.empty()) name.push_back('.');
        for (std::size_t i = 0; i < len; ++i) {
            char c = static_cast<char>(msg[pos + 1 + i]);
            if (c == '.' || static_cast<unsigned char>(c) < 0x21 || static_cast<unsigned char>(c) > 0x7E) {
                printable = false;
            }
            name.push_back(c);
        }
        pos += 1 + len;
    }
    return name;
}

}  // namespace

DnsMessage decode_dns_message(Bytes message) {
    ByteReader hdr(message);
    auto id = hdr.u16();
    auto flags = hdr.u16();
    auto qd = hdr.u16();
    auto an = hdr.u16();
    if (!id || !flags || !qd || !an || !hdr.skip(4)) malformed("header shorter than 12 bytes");

    DnsMessage out;
    out.id = *id;
    out.is_response = (*flags & 0x8000) != 0;
    out.rcode = *flags & 0x000F;
    if (*qd == 0) malformed("no question");

    std::size_t pos = 12;
    for (std::uint16_t q = 0; q < *qd; ++q) {
        bool printable = true;
        std::string name = read_name(message, pos, printable);
        if (pos + 4 > message.size()) malformed("truncated question");
        if (q == 0) {
            auto qname = printable ? try_canonicalize_domain(name) : std::nullopt;
            if (!qname) malformed("question name is not a host name");
            out.qname = std::move(*qname);
            out.qtype = static_cast<std::uint16_t>((message[pos] << 8) | message[pos + 1]);
        }
        pos += 4;
    }

    for (std::uint16_t a = 0; a < *an; ++a) {
        bool printable = true;
        std::string owner = read_name(message, pos, printable);
        ByteReader rr(message.subspan(pos));
        auto type = rr.u16();
        auto klass = rr.u16();
        auto ttl = rr.u32();
        auto rdlen = rr.u16();
        if (!type || !klass || !ttl || !rdlen) malformed("truncated resource record");
        std::size_t rdata_at = pos + 10;
        if (rdata_at + *rdlen > message.size()) malformed("rdata runs past message");
        pos = rdata_at + *rdlen;

        auto owner_name = printable ? try_canonicalize_domain(owner) : std::nullopt;
        switch (*type) {
            case kDnsTypeA: {
                if (*rdlen != 4) malformed("A rdata length");
                if (!owner_name) break;
                const auto* p = message.data() + rdata_at;
                out.answers.push_back({*owner_name, RType::A, IpAddr::v4({p[0], p[1], p[2], p[3]})});
                break;
            }
            case kDnsTypeAaaa: {
                if (*rdlen != 16) malformed("AAAA rdata length");
                if (!owner_name) break;
                std::array<std::uint8_t, 16> raw{};
                std::copy_n(message.data() + rdata_at, 16, raw.begin());
                out.answers.push_back({*owner_name, RType::AAAA, IpAddr::v6(raw)});
                break;
            }
            case kDnsTypeCname: {
                std::size_t at = rdata_at;
                bool target_printable = true;
                std::string target = read_name(message, at, target_printable);
                if (at > pos) malformed("CNAME target overruns rdata");
                auto target_name = target_printable ? try_canonicalize_domain(target) : std::nullopt;
                if (!owner_name || !target_name) break;
                out.answers.push_back({*owner_name, RType::CNAME, *target_name});
                break;
            }
            default:
                break;
        }
    }
    return out;
}

std::optional<TrafficEvent> parse_dns_message(Bytes message, const IpAddr& resolver_ip, double ts) {
    DnsMessage msg = decode_dns_message(message);
    if (!msg.is_response) return std::nullopt;
    TrafficEvent ev;
    ev.ts = ts;
    ev.payload = DnsObservation{resolver_ip, std::move(msg.qname), std::move(msg.answers)};
    return ev;
}

std::vector<std::uint8_t> encode_dns_query(std::uint16_t id, const DomainName& name,
                                           std::uint16_t qtype) {
    std::vector<std::uint8_t> out = {
        static_cast<std::uint8_t>(id >> 8), static_cast<std::uint8_t>(id & 0xFF),
        0x01, 0x00,  // RD
        0x00, 0x01,  // QDCOUNT
        0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
    };
    for (auto label : name.labels()) {
        out.push_back(static_cast<std::uint8_t>(label.size()));
        out.insert(out.end(), label.begin(), label.end());
    }
    out.push_back(0);
    out.push_back(static_cast<std::uint8_t>(qtype >> 8));
    out.push_back(static_cast<std::uint8_t>(qtype & 0xFF));
    out.push_back(0x00);
    out.push_back(0x01);  // IN
    return out;
}

}  // namespace bindwatch
