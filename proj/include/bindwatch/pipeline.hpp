#pragma once

// Streaming ingestion: match, filter, fingerprint, window, score, store.

#include <cstdint>
#include <istream>
#include <optional>
#include <string>

#include "bindwatch/events_io.hpp"
#include "bindwatch/feedback_store.hpp"
#include "bindwatch/match_filter.hpp"
#include "bindwatch/possibility.hpp"
#include "bindwatch/wire.hpp"

namespace bindwatch {

struct IngestReport {
    StoreCounters counters;           // this run only
    std::uint64_t windows_closed = 0;
    std::uint64_t auto_entries = 0;
    std::uint64_t skipped_lines = 0;  // JSONL input
    std::optional<CaptureCounters> capture;
    std::optional<std::string> capture_error;
};

// Events must arrive in (roughly) time order; the UTC day of each event drives
// the daily rollover.
class Pipeline {
public:
    explicit Pipeline(Store& store, FilterFeatures features = FilterFeatures::defaults());

    void ingest(const TrafficEvent& ev);
    // Closes open windows, feeds back IP strings and flushes the store.
    void finish();

    const IngestReport& report() const noexcept { return report_; }

private:
    void apply(const EvidenceSet& e);
    void sweep(double now);
    void refresh_matcher();

    static constexpr std::uint64_t kSweepEvery = 1024;

    Store& store_;
    FilterFeatures features_;
    Matcher matcher_;
    std::uint64_t matcher_version_ = ~std::uint64_t{0};
    WindowTracker windows_;
    std::optional<std::int64_t> day_;
    std::uint64_t since_sweep_ = 0;
    IngestReport report_;
};

IngestReport ingest_jsonl(Store& store, std::istream& in, const FilterFeatures& features = FilterFeatures::defaults());
// Throws PcapError when the file header is unusable; a truncated tail is
// reported in capture_error.
IngestReport ingest_pcap(Store& store, const std::string& path,
                         const FilterFeatures& features = FilterFeatures::defaults());

}  // namespace bindwatch
