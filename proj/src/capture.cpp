#include "bindwatch/wire.hpp"

#include <algorithm>

namespace bindwatch {

void HttpCorrelator::on_request(const StreamKey& key, double ts, HttpRequest request) {
    Stream& stream = streams_[key.normalized()];
    if (stream.pending.size() >= kMaxPendingPerStream) {
        stream.pending.pop_front();
        ++dropped_requests_;
    }
    stream.pending.push_back(Pending{ts, key.dst_ip, std::move(request)});
    stream.last_ts = ts;
}

std::optional<HttpObservation> HttpCorrelator::on_response(const StreamKey& key, double ts,
                                                           HttpResponse response) {
    auto it = streams_.find(key.normalized());
    if (it == streams_.end() || it->second.pending.empty()) {
        ++dropped_responses_;
        return std::nullopt;
    }
    Pending req = std::move(it->second.pending.front());
    it->second.pending.pop_front();
    it->second.last_ts = std::max(it->second.last_ts, ts);

    HttpObservation obs;
    obs.server_ip = key.src_ip;
    obs.host = std::move(req.request.host);
    obs.url_path = std::move(req.request.url_path);
    obs.status = response.status;
    obs.body = std::move(response.body);
    return obs;
}

void HttpCorrelator::expire_before(double ts) {
    std::erase_if(streams_, [ts](const auto& entry) { return entry.second.last_ts < ts; });
}

namespace {

constexpr std::uint16_t kDnsPort = 53;
constexpr double kStreamIdleSecs = 120.0;

}  // namespace

void CaptureDecoder::decode(const CaptureRecord& record, std::vector<TrafficEvent>& out) {
    ++counters_.records;
    auto pkt = decode_packet(record.link_payload, link_type_);
    if (!pkt) {
        ++counters_.undecodable;
        return;
    }
    if (pkt->payload.empty()) return;

    if (pkt->key.transport == Transport::udp) {
        if (pkt->key.src_port != kDnsPort && pkt->key.dst_port != kDnsPort) {
            ++counters_.other_payloads;
            return;
        }
        try {
            if (auto ev = parse_dns_message(pkt->payload, pkt->key.src_ip, record.ts)) {
                out.push_back(std::move(*ev));
                ++counters_.events;
            }
        } catch (const DnsMalformed&) {
            ++counters_.dns_malformed;
        }
        return;
    }

    const Bytes payload = pkt->payload;
    if (looks_like_http_response(payload)) {
        try {
            auto resp = parse_http_response(payload);
            if (auto obs = correlator_.on_response(pkt->key, record.ts, std::move(resp))) {
                out.push_back(TrafficEvent{record.ts, std::move(*obs)});
                ++counters_.events;
            }
        } catch (const HttpParseError&) {
            ++counters_.http_unparseable;
        }
    } else if (looks_like_http_request(payload)) {
        try {
            correlator_.on_request(pkt->key, record.ts, parse_http_request(payload));
        } catch (const HttpParseError&) {
            ++counters_.http_unparseable;
        }
    } else if (looks_like_tls_handshake(payload)) {
        try {
            DomainName sni = extract_sni(payload);
            out.push_back(TrafficEvent{record.ts, SslObservation{pkt->key.dst_ip, std::move(sni)}});
            ++counters_.events;
        } catch (const TlsParseError& e) {
            if (e.kind() == TlsParseError::Kind::NoSni) ++counters_.tls_no_sni;
            else ++counters_.tls_unparseable;
        }
    } else {
        ++counters_.other_payloads;
    }

    if (counters_.records % 4096 == 0) correlator_.expire_before(record.ts - kStreamIdleSecs);
}

PcapDecodeResult decode_pcap(Bytes image) {
    PcapDecodeResult result;
    try {
        PcapReader reader(image);
        CaptureDecoder decoder(reader.link_type());
        try {
            while (auto rec = reader.next()) decoder.decode(*rec, result.events);
        } catch (const PcapError& e) {
            result.error = e.what();
        }
        result.counters = decoder.counters();
    } catch (const PcapError& e) {
        result.error = e.what();
    }
    return result;
}

}  // namespace bindwatch
