#include "bindwatch/pipeline.hpp"

#include <fstream>
#include <iterator>

#include "bindwatch/fingerprint.hpp"

namespace bindwatch {

Pipeline::Pipeline(Store& store, FilterFeatures features) : store_(store), features_(std::move(features)) {
    day_ = store_.current_day();
}

void Pipeline::refresh_matcher() {
    auto version = store_.watch_version();
    if (version == matcher_version_) return;
    std::vector<SpecificString> specs;
    for (const auto& e : store_.watchlist()) specs.push_back(e.spec);
    matcher_ = Matcher(specs);
    matcher_version_ = version;
}

void Pipeline::apply(const EvidenceSet& e) {
    ++report_.windows_closed;
    auto st = store_.find_candidate(e.key).value_or(new_state(e.key, e.window_start));
    store_.upsert_candidate(apply_evidence(std::move(st), e, store_.config()));
}

void Pipeline::sweep(double now) {
    for (const auto& e : windows_.close_before(now, store_.config())) apply(e);
    bool in_sync = store_.watch_version() == matcher_version_;
    auto created = store_.auto_generate_ip_strings();
    report_.auto_entries += created.size();
    if (in_sync) {
        for (const auto& e : created) matcher_.add(e.spec);
        matcher_version_ = store_.watch_version();
    }
    since_sweep_ = 0;
}

void Pipeline::ingest(const TrafficEvent& ev) {
    ++report_.counters.events_ingested;

    std::int64_t day = day_index(ev.ts);
    if (!day_ || day > *day_) {
        if (day_) {
            for (const auto& e : windows_.close_all()) apply(e);
            sweep(ev.ts);
        }
        store_.rollover_to(day);
        day_ = day;
    }
    refresh_matcher();

    auto hits = matcher_.match(ev);
    if (hits.empty()) {
        if (++since_sweep_ >= kSweepEvery) sweep(ev.ts);
        return;
    }
    report_.counters.hits += hits.size();
    FilterCounters fc;
    hits = filter_hits(std::move(hits), store_.cdn_ips(), features_, &fc);
    report_.counters.filtered_cdn += fc.filtered_cdn;
    report_.counters.filtered_url += fc.filtered_url;

    const auto& cfg = store_.config();
    for (auto& hit : hits) {
        if (hit.proto == Proto::http && hit.http && hit.http->body && hit.http->status &&
            *hit.http->status >= 200 && *hit.http->status < 300) {
            if (auto ref = store_.reference_for(hit.key.domain)) {
                hit.fp_dist = hamming(fingerprint_document(*hit.http->body), *ref);
            }
        }
        if (auto closed = windows_.add(hit, cfg)) apply(*closed);
    }
    if (++since_sweep_ >= kSweepEvery) sweep(ev.ts);
}

void Pipeline::finish() {
    for (const auto& e : windows_.close_all()) apply(e);
    sweep(0.0);
    store_.add_counters(report_.counters);
    store_.flush();
}

IngestReport ingest_jsonl(Store& store, std::istream& in, const FilterFeatures& features) {
    Pipeline pipeline(store, features);
    auto counters = read_events_jsonl(in, [&](TrafficEvent&& ev) { pipeline.ingest(ev); });
    pipeline.finish();
    IngestReport report = pipeline.report();
    report.skipped_lines = counters.skipped;
    return report;
}

IngestReport ingest_pcap(Store& store, const std::string& path, const FilterFeatures& features) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PcapError(PcapError::Kind::TruncatedHeader, "cannot open " + path);
    std::string image((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    PcapReader reader(as_bytes(image));
    CaptureDecoder decoder(reader.link_type());
    Pipeline pipeline(store, features);
    std::optional<std::string> error;
    std::vector<TrafficEvent> batch;
    try {
        while (auto rec = reader.next()) {
            decoder.decode(*rec, batch);
            for (const auto& ev : batch) pipeline.ingest(ev);
            batch.clear();
        }
    } catch (const PcapError& e) {
        error = e.what();
    }
    pipeline.finish();
    IngestReport report = pipeline.report();
    report.capture = decoder.counters();
    report.capture_error = error;
    return report;
}

}  // namespace bindwatch
