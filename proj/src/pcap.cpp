#include "bindwatch/wire.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <tuple>

namespace bindwatch {

namespace {

constexpr std::uint32_t kMagicMicros = 0xa1b2c3d4;
constexpr std::uint32_t kMagicNanos = 0xa1b23c4d;
constexpr std::uint32_t kMaxRecordBytes = 262144;

std::uint32_t load_le32(const std::uint8_t* p) noexcept {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
           (std::uint32_t{p[3]} << 24);
}

std::uint32_t bswap32(std::uint32_t v) noexcept {
    return (v >> 24) | ((v >> 8) & 0xFF00) | ((v << 8) & 0xFF0000) | (v << 24);
}

}  // namespace

PcapReader::PcapReader(Bytes image) : image_(image) {
    if (image_.size() < 4) throw PcapError(PcapError::Kind::BadMagic, "pcap: missing magic");
    // The magic is written in the writer's native order; read it as
    // little-endian and infer whether the remaining fields need swapping.
    std::uint32_t magic = load_le32(image_.data());
    if (magic == kMagicMicros || magic == kMagicNanos) {
        swapped_ = false;
    } else if (bswap32(magic) == kMagicMicros || bswap32(magic) == kMagicNanos) {
        swapped_ = true;
        magic = bswap32(magic);
    } else {
        throw PcapError(PcapError::Kind::BadMagic, "pcap: bad magic");
    }
    nanos_ = magic == kMagicNanos;
    if (image_.size() < 24) throw PcapError(PcapError::Kind::TruncatedHeader, "pcap: short global header");
    link_type_ = u32(20);
}

std::uint32_t PcapReader::u32(std::size_t at) const noexcept {
    std::uint32_t v = load_le32(image_.data() + at);
    return swapped_ ? bswap32(v) : v;
}

std::optional<CaptureRecord> PcapReader::next() {
    if (pos_ == image_.size()) return std::nullopt;
    if (image_.size() - pos_ < 16) {
        pos_ = image_.size();
        throw PcapError(PcapError::Kind::TruncatedRecord, "pcap: truncated record header");
    }
    std::uint32_t sec = u32(pos_);
    std::uint32_t frac = u32(pos_ + 4);
    std::uint32_t incl = u32(pos_ + 8);
    if (incl > kMaxRecordBytes) {
        pos_ = image_.size();
        throw PcapError(PcapError::Kind::OversizedRecord, "pcap: record length exceeds limit");
    }
    if (image_.size() - pos_ - 16 < incl) {
        pos_ = image_.size();
        throw PcapError(PcapError::Kind::TruncatedRecord, "pcap: truncated record body");
    }
    CaptureRecord rec;
    rec.ts = static_cast<double>(sec) + static_cast<double>(frac) / (nanos_ ? 1e9 : 1e6);
    const std::uint8_t* body = image_.data() + pos_ + 16;
    rec.link_payload.assign(body, body + incl);
    pos_ += 16 + incl;
    return rec;
}

std::vector<CaptureRecord> read_pcap(Bytes image) {
    PcapReader reader(image);
    std::vector<CaptureRecord> out;
    while (auto rec = reader.next()) out.push_back(std::move(*rec));
    return out;
}

// ------------------------------------------------------- decapsulation

StreamKey StreamKey::reversed() const noexcept {
    return StreamKey{dst_ip, src_ip, dst_port, src_port, transport};
}

StreamKey StreamKey::normalized() const noexcept {
    if (std::tie(src_ip, src_port) <= std::tie(dst_ip, dst_port)) return *this;
    return reversed();
}

namespace {

std::uint16_t be16(const std::uint8_t* p) noexcept {
    return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::optional<Packet> decode_transport(std::uint8_t proto, const IpAddr& src, const IpAddr& dst,
                                       Bytes seg) noexcept {
    Packet pkt;
    pkt.key.src_ip = src;
    pkt.key.dst_ip = dst;
    if (proto == 17) {
        if (seg.size() < 8) return std::nullopt;
        pkt.key.transport = Transport::udp;
        pkt.key.src_port = be16(seg.data());
        pkt.key.dst_port = be16(seg.data() + 2);
        std::size_t udp_len = be16(seg.data() + 4);
        std::size_t end = (udp_len >= 8 && udp_len <= seg.size()) ? udp_len : seg.size();
        pkt.payload = seg.subspan(8, end - 8);
        return pkt;
    }
    if (proto == 6) {
        if (seg.size() < 20) return std::nullopt;
        pkt.key.transport = Transport::tcp;
        pkt.key.src_port = be16(seg.data());
        pkt.key.dst_port = be16(seg.data() + 2);
        std::size_t off = static_cast<std::size_t>(seg[12] >> 4) * 4;
        if (off < 20 || off > seg.size()) return std::nullopt;
        pkt.payload = seg.subspan(off);
        return pkt;
    }
    return std::nullopt;
}

std::optional<Packet> decode_ipv4(Bytes ip) noexcept {
    if (ip.size() < 20 || (ip[0] >> 4) != 4) return std::nullopt;
    std::size_t ihl = static_cast<std::size_t>(ip[0] & 0x0F) * 4;
    if (ihl < 20 || ihl > ip.size()) return std::nullopt;
    std::size_t total = be16(ip.data() + 2);
    if (total < ihl) return std::nullopt;
    if (total > ip.size()) total = ip.size();
    std::uint16_t frag = be16(ip.data() + 6);
    if ((frag & 0x2000) != 0 || (frag & 0x1FFF) != 0) return std::nullopt;
    auto src = IpAddr::v4({ip[12], ip[13], ip[14], ip[15]});
    auto dst = IpAddr::v4({ip[16], ip[17], ip[18], ip[19]});
    return decode_transport(ip[9], src, dst, ip.subspan(ihl, total - ihl));
}

std::optional<Packet> decode_ipv6(Bytes ip) noexcept {
    if (ip.size() < 40 || (ip[0] >> 4) != 6) return std::nullopt;
    std::size_t payload_len = be16(ip.data() + 4);
    std::array<std::uint8_t, 16> s{}, d{};
    std::memcpy(s.data(), ip.data() + 8, 16);
    std::memcpy(d.data(), ip.data() + 24, 16);
    std::uint8_t next = ip[6];
    Bytes rest = ip.subspan(40, std::min(payload_len, ip.size() - 40));
    // Hop-by-hop, routing and destination options headers; fragments are dropped.
    for (int hops = 0; hops < 8; ++hops) {
        if (next == 0 || next == 43 || next == 60) {
            if (rest.size() < 8) return std::nullopt;
            std::size_t len = (static_cast<std::size_t>(rest[1]) + 1) * 8;
            if (len > rest.size()) return std::nullopt;
            next = rest[0];
            rest = rest.subspan(len);
            continue;
        }
        break;
    }
    return decode_transport(next, IpAddr::v6(s), IpAddr::v6(d), rest);
}

}  // namespace

std::optional<Packet> decode_packet(Bytes frame, std::uint32_t link_type) noexcept {
    Bytes ip;
    if (link_type == kLinkTypeEthernet) {
        if (frame.size() < 14) return std::nullopt;
        std::size_t off = 12;
        std::uint16_t ethertype = be16(frame.data() + off);
        for (int tags = 0; tags < 2 && (ethertype == 0x8100 || ethertype == 0x88a8); ++tags) {
            off += 4;
            if (frame.size() < off + 2) return std::nullopt;
            ethertype = be16(frame.data() + off);
        }
        ip = frame.subspan(off + 2);
        if (ethertype == 0x0800) return decode_ipv4(ip);
        if (ethertype == 0x86DD) return decode_ipv6(ip);
        return std::nullopt;
    }
    if (link_type == kLinkTypeRaw) {
        if (frame.empty()) return std::nullopt;
        if ((frame[0] >> 4) == 4) return decode_ipv4(frame);
        if ((frame[0] >> 4) == 6) return decode_ipv6(frame);
    }
    return std::nullopt;
}

}  // namespace bindwatch
