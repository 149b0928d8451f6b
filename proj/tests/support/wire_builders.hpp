#pragma once

// Hand-rolled encoders used as round-trip partners for the decoders.
// Written against RFC 1035 / libpcap / RFC 8446 layouts directly and sharing
// no code with the library.

#include <array>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace testsupport {

using ByteVec = std::vector<std::uint8_t>;

inline void put16(ByteVec& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v >> 8));
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline void put32(ByteVec& b, std::uint32_t v) {
    put16(b, static_cast<std::uint16_t>(v >> 16));
    put16(b, static_cast<std::uint16_t>(v & 0xffff));
}

inline void put32le(ByteVec& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put16le(ByteVec& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

// ------------------------------------------------------------------ DNS

struct RR {
    std::string name;
    std::uint16_t type = 1;
    std::uint32_t ttl = 300;
    ByteVec address;     // A / AAAA
    std::string target;  // CNAME
    ByteVec raw;         // any other type
};

struct DnsSpec {
    std::uint16_t id = 0;
    bool response = true;
    int rcode = 0;
    std::string qname;
    std::uint16_t qtype = 1;
    std::vector<RR> answers;
    std::vector<RR> authority;
};

class DnsEncoder {
public:
    explicit DnsEncoder(bool compress) : compress_(compress) {}

    ByteVec encode(const DnsSpec& m) {
        out_.clear();
        offsets_.clear();
        put16(out_, m.id);
        std::uint16_t flags = 0x0100;  // RD
        if (m.response) flags |= 0x8000 | 0x0080;
        flags |= static_cast<std::uint16_t>(m.rcode & 0xf);
        put16(out_, flags);
        put16(out_, 1);
        put16(out_, static_cast<std::uint16_t>(m.answers.size()));
        put16(out_, static_cast<std::uint16_t>(m.authority.size()));
        put16(out_, 0);
        name(m.qname);
        put16(out_, m.qtype);
        put16(out_, 1);
        for (const auto& rr : m.answers) record(rr);
        for (const auto& rr : m.authority) record(rr);
        return out_;
    }

private:
    void name(const std::string& n) {
        std::string rest = n;
        while (!rest.empty()) {
            if (compress_) {
                auto it = offsets_.find(rest);
                if (it != offsets_.end()) {
                    put16(out_, static_cast<std::uint16_t>(0xc000 | it->second));
                    return;
                }
                if (out_.size() < 0x3fff) offsets_.emplace(rest, static_cast<std::uint16_t>(out_.size()));
            }
            auto dot = rest.find('.');
            std::string label = rest.substr(0, dot);
            out_.push_back(static_cast<std::uint8_t>(label.size()));
            out_.insert(out_.end(), label.begin(), label.end());
            rest = dot == std::string::npos ? std::string() : rest.substr(dot + 1);
        }
        out_.push_back(0);
    }

    void record(const RR& rr) {
        name(rr.name);
        put16(out_, rr.type);
        put16(out_, 1);
        put32(out_, rr.ttl);
        std::size_t len_at = out_.size();
        put16(out_, 0);
        std::size_t start = out_.size();
        if (rr.type == 5) {
            name(rr.target);
        } else if (!rr.address.empty()) {
            out_.insert(out_.end(), rr.address.begin(), rr.address.end());
        } else {
            out_.insert(out_.end(), rr.raw.begin(), rr.raw.end());
        }
        std::size_t len = out_.size() - start;
        out_[len_at] = static_cast<std::uint8_t>(len >> 8);
        out_[len_at + 1] = static_cast<std::uint8_t>(len & 0xff);
    }

    bool compress_;
    ByteVec out_;
    std::map<std::string, std::uint16_t> offsets_;
};

// ------------------------------------------------------------ frames

struct Endpoint {
    ByteVec ip;  // 4 or 16 bytes
    std::uint16_t port = 0;
};

inline ByteVec v4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) { return {a, b, c, d}; }

inline std::uint16_t ones_complement(const ByteVec& b, std::size_t from, std::size_t len) {
    std::uint32_t sum = 0;
    for (std::size_t i = 0; i + 1 < len; i += 2) sum += (b[from + i] << 8) | b[from + i + 1];
    if (len & 1) sum += b[from + len - 1] << 8;
    while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
    return static_cast<std::uint16_t>(~sum);
}

// IP packet carrying one UDP datagram or TCP segment (PSH|ACK).
inline ByteVec ip_packet(const Endpoint& src, const Endpoint& dst, bool tcp, const ByteVec& payload) {
    ByteVec l4;
    if (tcp) {
        put16(l4, src.port);
        put16(l4, dst.port);
        put32(l4, 1000);  // seq
        put32(l4, 2000);  // ack
        l4.push_back(0x50);
        l4.push_back(0x18);
        put16(l4, 65535);
        put16(l4, 0);
        put16(l4, 0);
    } else {
        put16(l4, src.port);
        put16(l4, dst.port);
        put16(l4, static_cast<std::uint16_t>(8 + payload.size()));
        put16(l4, 0);
    }
    l4.insert(l4.end(), payload.begin(), payload.end());

    ByteVec pkt;
    if (src.ip.size() == 4) {
        pkt.push_back(0x45);
        pkt.push_back(0);
        put16(pkt, static_cast<std::uint16_t>(20 + l4.size()));
        put16(pkt, 0x1234);
        put16(pkt, 0x4000);  // DF
        pkt.push_back(64);
        pkt.push_back(tcp ? 6 : 17);
        put16(pkt, 0);
        pkt.insert(pkt.end(), src.ip.begin(), src.ip.end());
        pkt.insert(pkt.end(), dst.ip.begin(), dst.ip.end());
        std::uint16_t csum = ones_complement(pkt, 0, 20);
        pkt[10] = static_cast<std::uint8_t>(csum >> 8);
        pkt[11] = static_cast<std::uint8_t>(csum & 0xff);
    } else {
        put32(pkt, 0x60000000);
        put16(pkt, static_cast<std::uint16_t>(l4.size()));
        pkt.push_back(tcp ? 6 : 17);
        pkt.push_back(64);
        pkt.insert(pkt.end(), src.ip.begin(), src.ip.end());
        pkt.insert(pkt.end(), dst.ip.begin(), dst.ip.end());
    }
    pkt.insert(pkt.end(), l4.begin(), l4.end());
    return pkt;
}

inline ByteVec ethernet(const ByteVec& ip_pkt, bool v6, int vlan_tags = 0) {
    ByteVec f = {0x02, 0, 0, 0, 0, 1, 0x02, 0, 0, 0, 0, 2};
    for (int i = 0; i < vlan_tags; ++i) {
        put16(f, i == 0 && vlan_tags == 2 ? 0x88a8 : 0x8100);
        put16(f, static_cast<std::uint16_t>(100 + i));
    }
    put16(f, v6 ? 0x86dd : 0x0800);
    f.insert(f.end(), ip_pkt.begin(), ip_pkt.end());
    return f;
}

// ------------------------------------------------------------- pcap

struct PcapRecordSpec {
    std::uint32_t sec = 0;
    std::uint32_t frac = 0;  // micro- or nanoseconds
    ByteVec data;
    std::optional<std::uint32_t> orig_len;
};

inline ByteVec pcap_image(std::uint32_t link_type, const std::vector<PcapRecordSpec>& records, bool big_endian = false,
                          bool nanos = false) {
    ByteVec out;
    auto w32 = [&](std::uint32_t v) { big_endian ? put32(out, v) : put32le(out, v); };
    auto w16 = [&](std::uint16_t v) { big_endian ? put16(out, v) : put16le(out, v); };
    w32(nanos ? 0xa1b23c4d : 0xa1b2c3d4);
    w16(2);
    w16(4);
    w32(0);
    w32(0);
    w32(262144);
    w32(link_type);
    for (const auto& r : records) {
        w32(r.sec);
        w32(r.frac);
        w32(static_cast<std::uint32_t>(r.data.size()));
        w32(r.orig_len.value_or(static_cast<std::uint32_t>(r.data.size())));
        out.insert(out.end(), r.data.begin(), r.data.end());
    }
    return out;
}

// -------------------------------------------------------------- TLS

// TLS 1.2-style record holding a ClientHello with an optional SNI plus a few
// other extensions in front of it.
inline ByteVec client_hello(const std::optional<std::string>& sni, bool padding_ext = true) {
    ByteVec ext;
    if (padding_ext) {
        put16(ext, 0x000b);  // ec_point_formats
        put16(ext, 2);
        ext.push_back(1);
        ext.push_back(0);
    }
    if (sni) {
        ByteVec list;
        list.push_back(0);  // host_name
        put16(list, static_cast<std::uint16_t>(sni->size()));
        list.insert(list.end(), sni->begin(), sni->end());
        put16(ext, 0x0000);
        put16(ext, static_cast<std::uint16_t>(list.size() + 2));
        put16(ext, static_cast<std::uint16_t>(list.size()));
        ext.insert(ext.end(), list.begin(), list.end());
    }
    put16(ext, 0x0010);  // ALPN
    put16(ext, 5);
    put16(ext, 3);
    ext.push_back(2);
    ext.push_back('h');
    ext.push_back('2');

    ByteVec body;
    put16(body, 0x0303);
    for (int i = 0; i < 32; ++i) body.push_back(static_cast<std::uint8_t>(i * 7));
    body.push_back(32);
    for (int i = 0; i < 32; ++i) body.push_back(static_cast<std::uint8_t>(255 - i));
    put16(body, 4);
    put16(body, 0x1301);
    put16(body, 0xc02f);
    body.push_back(1);
    body.push_back(0);
    put16(body, static_cast<std::uint16_t>(ext.size()));
    body.insert(body.end(), ext.begin(), ext.end());

    ByteVec hs;
    hs.push_back(1);
    hs.push_back(static_cast<std::uint8_t>(body.size() >> 16));
    hs.push_back(static_cast<std::uint8_t>(body.size() >> 8));
    hs.push_back(static_cast<std::uint8_t>(body.size()));
    hs.insert(hs.end(), body.begin(), body.end());

    ByteVec rec = {0x16, 0x03, 0x01};
    put16(rec, static_cast<std::uint16_t>(hs.size()));
    rec.insert(rec.end(), hs.begin(), hs.end());
    return rec;
}

inline ByteVec bytes_of(const std::string& s) { return ByteVec(s.begin(), s.end()); }

inline ByteVec http_get(const std::string& host, const std::string& path) {
    return bytes_of("GET " + path + " HTTP/1.1\r\nHost: " + host + "\r\nUser-Agent: t\r\nAccept: */*\r\n\r\n");
}

inline ByteVec http_ok(const std::string& body, int status = 200) {
    return bytes_of("HTTP/1.1 " + std::to_string(status) + " X\r\nContent-Type: text/html\r\nContent-Length: " +
                    std::to_string(body.size()) + "\r\n\r\n" + body);
}

}  // namespace testsupport
