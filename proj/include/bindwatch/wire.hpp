#pragma once

// Capture and protocol decoding: classic pcap, link/network/transport
// decapsulation, DNS responses, HTTP/1.x single-segment messages and TLS
// ClientHello SNI. Everything here is a pure function of its input bytes
// except HttpCorrelator, which keeps per-stream state.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bindwatch/model.hpp"

namespace bindwatch {

using Bytes = std::span<const std::uint8_t>;

inline Bytes as_bytes(std::string_view s) noexcept {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline std::string_view as_chars(Bytes b) noexcept {
    return {reinterpret_cast<const char*>(b.data()), b.size()};
}

// ---------------------------------------------------------------- pcap

struct CaptureRecord {
    double ts = 0.0;
    std::vector<std::uint8_t> link_payload;

    friend bool operator==(const CaptureRecord&, const CaptureRecord&) = default;
};

class PcapError : public Error {
public:
    enum class Kind { BadMagic, TruncatedHeader, TruncatedRecord, OversizedRecord };
    PcapError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

inline constexpr std::uint32_t kLinkTypeEthernet = 1;
inline constexpr std::uint32_t kLinkTypeRaw = 101;

// Incremental reader over an in-memory classic pcap image. next() yields
// records in file order and throws PcapError at the first truncated record,
// after every complete record before it has been returned.
class PcapReader {
public:
    // Throws PcapError (BadMagic, TruncatedHeader).
    explicit PcapReader(Bytes image);

    std::optional<CaptureRecord> next();

    std::uint32_t link_type() const noexcept { return link_type_; }
    bool byte_swapped() const noexcept { return swapped_; }

private:
    std::uint32_t u32(std::size_t at) const noexcept;

    Bytes image_;
    std::size_t pos_ = 24;
    bool swapped_ = false;
    bool nanos_ = false;
    std::uint32_t link_type_ = kLinkTypeEthernet;
};

// Reads every record; throws on the first error.
std::vector<CaptureRecord> read_pcap(Bytes image);

// ------------------------------------------------------ decapsulation

enum class Transport : std::uint8_t { tcp, udp };

struct StreamKey {
    IpAddr src_ip;
    IpAddr dst_ip;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    Transport transport = Transport::tcp;

    // Direction-independent form: the lower (ip, port) endpoint first.
    StreamKey normalized() const noexcept;
    StreamKey reversed() const noexcept;

    friend bool operator==(const StreamKey&, const StreamKey&) = default;
    friend auto operator<=>(const StreamKey&, const StreamKey&) = default;
};

struct Packet {
    StreamKey key;
    Bytes payload;  // view into the capture record
};

// Ethernet (with up to two VLAN tags) or raw IP, then IPv4/IPv6 and TCP/UDP.
// Returns nullopt for anything else, including IP fragments.
std::optional<Packet> decode_packet(Bytes frame, std::uint32_t link_type) noexcept;

// ---------------------------------------------------------------- DNS

class DnsMalformed : public Error {
public:
    using Error::Error;
};

inline constexpr int kMaxCompressionJumps = 64;

inline constexpr std::uint16_t kDnsTypeA = 1;
inline constexpr std::uint16_t kDnsTypeCname = 5;
inline constexpr std::uint16_t kDnsTypeAaaa = 28;

struct DnsMessage {
    std::uint16_t id = 0;
    bool is_response = false;
    int rcode = 0;
    DomainName qname;
    std::uint16_t qtype = 0;
    std::vector<DnsRecord> answers;  // A, AAAA and CNAME only
};

// Full decode of header, first question and answer section. Answer records
// with names that are not valid host names are skipped. Throws DnsMalformed.
DnsMessage decode_dns_message(Bytes message);

// Responses (QR=1) become a dns TrafficEvent; queries yield nullopt.
// Throws DnsMalformed.
std::optional<TrafficEvent> parse_dns_message(Bytes message, const IpAddr& resolver_ip, double ts);

// Standard recursive query for one name; used by the active prober.
std::vector<std::uint8_t> encode_dns_query(std::uint16_t id, const DomainName& name,
                                           std::uint16_t qtype);

// ---------------------------------------------------------------- HTTP

class HttpParseError : public Error {
public:
    enum class Kind { NotHttp, MissingHost, Incomplete };
    HttpParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct HttpRequest {
    std::string method;
    DomainName host;
    std::string url_path;  // path (percent-decoded) plus raw query and fragment
};

struct HttpResponse {
    int status = 0;
    std::string body;  // at most kMaxBodyBytes
};

// Cheap sniffers for dispatching TCP payloads.
bool looks_like_http_request(Bytes payload) noexcept;
bool looks_like_http_response(Bytes payload) noexcept;

HttpRequest parse_http_request(Bytes segment);
HttpResponse parse_http_response(Bytes segment);

// ----------------------------------------------------------------- TLS

class TlsParseError : public Error {
public:
    enum class Kind { NotClientHello, NoSni, Malformed };
    TlsParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

bool looks_like_tls_handshake(Bytes payload) noexcept;

// First host_name entry of the server_name extension.
DomainName extract_sni(Bytes record);

// --------------------------------------------------------- correlation

// Pairs responses with requests on the same direction-normalized stream.
// Requests are answered in the order they were sent (HTTP/1.1 pipelining),
// so the oldest unanswered request takes the next response.
class HttpCorrelator {
public:
    static constexpr std::size_t kMaxPendingPerStream = 32;

    // `key` is the request packet's own direction (client -> server).
    void on_request(const StreamKey& key, double ts, HttpRequest request);

    // `key` is the response packet's own direction (server -> client).
    std::optional<HttpObservation> on_response(const StreamKey& key, double ts,
                                               HttpResponse response);

    // Forget streams whose newest request is older than `ts`.
    void expire_before(double ts);

    std::size_t dropped_responses() const noexcept { return dropped_responses_; }
    std::size_t dropped_requests() const noexcept { return dropped_requests_; }
    std::size_t open_streams() const noexcept { return streams_.size(); }

private:
    struct Pending {
        double ts;
        IpAddr server_ip;
        HttpRequest request;
    };
    struct Stream {
        std::deque<Pending> pending;
        double last_ts = 0.0;
    };

    std::map<StreamKey, Stream> streams_;
    std::size_t dropped_responses_ = 0;
    std::size_t dropped_requests_ = 0;
};

// ------------------------------------------------------- capture to events

struct CaptureCounters {
    std::size_t records = 0;
    std::size_t undecodable = 0;
    std::size_t dns_malformed = 0;
    std::size_t http_unparseable = 0;
    std::size_t tls_unparseable = 0;
    std::size_t tls_no_sni = 0;
    std::size_t other_payloads = 0;
    std::size_t events = 0;
};

// Turns capture records into TrafficEvents: UDP/53 responses, HTTP/1.x
// request/response pairs and TLS ClientHellos.
class CaptureDecoder {
public:
    explicit CaptureDecoder(std::uint32_t link_type = kLinkTypeEthernet) : link_type_(link_type) {}

    void set_link_type(std::uint32_t link_type) noexcept { link_type_ = link_type; }

    // Appends zero or more events for one record.
    void decode(const CaptureRecord& record, std::vector<TrafficEvent>& out);

    const CaptureCounters& counters() const noexcept { return counters_; }
    const HttpCorrelator& correlator() const noexcept { return correlator_; }

private:
    std::uint32_t link_type_;
    HttpCorrelator correlator_;
    CaptureCounters counters_;
};

// Decodes a whole pcap image. Events produced before a truncated record are
// kept; `error` carries the failure if one occurred.
struct PcapDecodeResult {
    std::vector<TrafficEvent> events;
    CaptureCounters counters;
    std::optional<std::string> error;
};

PcapDecodeResult decode_pcap(Bytes image);

}  // namespace bindwatch
