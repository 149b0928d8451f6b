#pragma once

// Persistent pipeline state: watchlist (user and fed-back IP strings),
// candidate states, reference fingerprints, verdicts and the review queue.
// JSONL journal plus periodic full snapshot.

#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bindwatch/fingerprint.hpp"
#include "bindwatch/match_filter.hpp"
#include "bindwatch/model.hpp"
#include "bindwatch/possibility.hpp"

namespace bindwatch {

class NotFound : public Error {
public:
    using Error::Error;
};

class AlreadyResolved : public Error {
public:
    using Error::Error;
};

class SchemaMismatch : public Error {
public:
    using Error::Error;
};

class CorruptSnapshot : public Error {
public:
    using Error::Error;
};

class StoreError : public Error {
public:
    using Error::Error;
};

class InvalidVerdict : public Error {
public:
    using Error::Error;
};

inline constexpr int kSchemaVersion = 1;
inline constexpr std::int64_t kAutoEntryQuietDays = 7;
inline constexpr std::size_t kPageExcerptBytes = 4096;

struct WatchlistEntry {
    SpecificString spec;
    double created_ts = 0.0;
    std::optional<CandidateKey> origin_key;  // auto entries only
    std::int64_t last_supported_day = 0;     // auto entries: last day some state held p >= t2

    friend bool operator==(const WatchlistEntry&, const WatchlistEntry&) = default;
};

enum class VerdictValue : std::uint8_t { Correct, Incorrect, Uncertain };
enum class VerdictSource : std::uint8_t { automatic, human };

std::string_view to_string(VerdictValue v) noexcept;
std::string_view to_string(VerdictSource s) noexcept;
std::optional<VerdictValue> verdict_from_string(std::string_view text) noexcept;

struct Verdict {
    CandidateKey key;
    VerdictValue value = VerdictValue::Uncertain;
    VerdictSource source = VerdictSource::automatic;
    double ts = 0.0;
    double expires_ts = 0.0;

    friend bool operator==(const Verdict&, const Verdict&) = default;
};

struct EvidenceSummary {
    bool ssl = false;
    bool dns = false;
    bool http = false;
    double p = 0.0;

    friend bool operator==(const EvidenceSummary&, const EvidenceSummary&) = default;
};

enum class ReviewState : std::uint8_t { pending, resolved };

struct ReviewItem {
    std::string id;
    CandidateKey key;
    EvidenceSummary evidence;
    std::string page_excerpt;  // raw bytes, at most kPageExcerptBytes
    std::optional<int> dist;
    double created_ts = 0.0;
    ReviewState state = ReviewState::pending;
    std::optional<Verdict> verdict;  // set once resolved

    friend bool operator==(const ReviewItem&, const ReviewItem&) = default;
};

// Active reference plus a newer crawl awaiting operator confirmation.
struct ReferenceSlot {
    DomainName domain;
    std::optional<ReferenceFingerprint> active;
    std::optional<ReferenceFingerprint> pending;

    friend bool operator==(const ReferenceSlot&, const ReferenceSlot&) = default;
};

struct StoreCounters {
    std::uint64_t events_ingested = 0;
    std::uint64_t hits = 0;
    std::uint64_t filtered_cdn = 0;
    std::uint64_t filtered_url = 0;

    StoreCounters& operator+=(const StoreCounters& o) noexcept;
    friend bool operator==(const StoreCounters&, const StoreCounters&) = default;
};

struct PublishedEntry {
    CandidateKey key;
    double p = 0.0;
    Status status = Status::Published;
    std::optional<double> valid_until;

    friend bool operator==(const PublishedEntry&, const PublishedEntry&) = default;
};

std::string published_to_json_line(const PublishedEntry& e);

struct CandidateFilter {
    std::optional<Status> status;
    std::optional<double> min_p;
    std::optional<DomainName> domain;  // the domain and its subdomains
};

struct StoreSnapshot {
    int schema_version = kSchemaVersion;
    std::optional<std::int64_t> current_day;
    std::uint64_t next_review_id = 1;
    StoreCounters counters;
    std::vector<PossibilityState> candidates;  // sorted by key
    std::vector<WatchlistEntry> watchlist;     // sorted by (kind, value)
    std::vector<ReferenceSlot> references;     // sorted by domain
    std::vector<IpAddr> cdn_ips;               // oldest first
    std::vector<ReviewItem> reviews;           // sorted by id number
    std::vector<Verdict> verdicts;             // latest per key, sorted by key

    friend bool operator==(const StoreSnapshot&, const StoreSnapshot&) = default;
};

std::string snapshot_to_json(const StoreSnapshot& snap);
// Throws CorruptSnapshot or SchemaMismatch.
StoreSnapshot snapshot_from_json(std::string_view text);

class Store {
public:
    // In-memory store without a journal.
    explicit Store(PipelineConfig cfg, Clock clock = system_clock());
    // Opens (or creates) a store directory: restores snapshot.json, replays
    // journal.jsonl and keeps appending to it. Throws StoreError,
    // CorruptSnapshot, SchemaMismatch.
    static std::unique_ptr<Store> open(const std::filesystem::path& dir, PipelineConfig cfg,
                                       Clock clock = system_clock());
    ~Store();

    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    const PipelineConfig& config() const noexcept { return cfg_; }
    double now() const { return clock_(); }

    // Flush after every mutation (service mode).
    void set_auto_flush(bool on);

    // --- watchlist
    struct AddResult {
        WatchlistEntry entry;
        bool created = false;
    };
    AddResult add_user_string(const SpecificString& spec);
    bool remove_watch(const SpecificString& spec);
    std::vector<WatchlistEntry> watchlist() const;
    std::uint64_t watch_version() const;
    // Adds an auto IP entry for every fresh state with p >= t2 that is not
    // Rejected; returns the entries created.
    std::vector<WatchlistEntry> auto_generate_ip_strings();

    // --- candidates
    void upsert_candidate(const PossibilityState& st);
    PossibilityState get_candidate(const CandidateKey& key) const;  // throws NotFound
    std::optional<PossibilityState> find_candidate(const CandidateKey& key) const;
    std::vector<PossibilityState> list_candidates(const CandidateFilter& filter = {}) const;
    std::size_t candidate_count() const;

    std::vector<PublishedEntry> publish_list() const { return publish_list(now()); }
    std::vector<PublishedEntry> publish_list(double now) const;

    // Runs daily_update for every day from the current day up to `day`, then
    // ages auto entries. The first call only sets the current day.
    void rollover_to(std::int64_t day);
    std::optional<std::int64_t> current_day() const;

    // --- references
    void put_pending_reference(const ReferenceFingerprint& ref);
    void confirm_reference(const DomainName& domain);  // throws NotFound
    // Active reference of `host` or its nearest parent with one.
    std::optional<Fingerprint> reference_for(const DomainName& host) const;
    std::vector<ReferenceSlot> references() const;

    // --- verdicts and review
    PossibilityState apply_verdict(const Verdict& v);
    std::optional<Verdict> last_verdict(const CandidateKey& key) const;
    void mark_probed(const CandidateKey& key, double ts);
    // Coalesces with a pending item for the same key.
    ReviewItem enqueue_review(const CandidateKey& key, std::string_view page, std::optional<int> dist);
    // Throws NotFound, AlreadyResolved, InvalidVerdict (Uncertain).
    PossibilityState apply_human_verdict(const std::string& id, VerdictValue value);
    ReviewItem get_review(const std::string& id) const;
    std::vector<ReviewItem> pending_reviews() const;

    // --- CDN addresses and counters
    CdnIpSet& cdn_ips() noexcept { return cdn_ips_; }
    void add_counters(const StoreCounters& delta);
    StoreCounters counters() const;

    // --- persistence
    StoreSnapshot state() const;
    void load_state(StoreSnapshot snap);
    void snapshot(const std::filesystem::path& path) const;
    void restore(const std::filesystem::path& path);
    // Snapshot into the store directory and truncate the journal.
    void checkpoint();
    // Appends pending journal records and syncs them. Returns once durable.
    void flush();

private:
    struct JournalFile;

    void journal(std::string op, std::string data_json);
    void flush_locked();
    void maybe_flush_locked();
    void apply_record(std::string_view line);
    void replay_journal(const std::filesystem::path& path);

    StoreSnapshot state_locked() const;
    static void write_snapshot(const std::filesystem::path& path, const std::string& text);
    void set_candidate_locked(const PossibilityState& st);
    void ensure_auto_entry_locked(const PossibilityState& st, std::vector<WatchlistEntry>* created);
    PossibilityState apply_verdict_locked(const Verdict& v);
    void put_watch_locked(const WatchlistEntry& e);
    void put_review_locked(const ReviewItem& item);

    PipelineConfig cfg_;
    Clock clock_;

    mutable std::shared_mutex mutex_;
    std::map<CandidateKey, PossibilityState> candidates_;
    std::map<std::pair<SpecKind, std::string>, WatchlistEntry> watchlist_;
    std::map<DomainName, ReferenceSlot> references_;
    std::map<std::uint64_t, ReviewItem> reviews_;  // by id number
    std::unordered_map<CandidateKey, std::string, CandidateKeyHash> pending_by_key_;
    std::map<CandidateKey, Verdict> verdicts_;
    CdnIpSet cdn_ips_;
    StoreCounters counters_;
    std::optional<std::int64_t> current_day_;
    std::uint64_t next_review_id_ = 1;
    std::uint64_t watch_version_ = 0;

    std::unordered_set<CandidateKey, CandidateKeyHash> feedback_dirty_;
    bool feedback_full_sweep_ = true;

    // journal state
    std::mutex journal_mutex_;
    std::vector<std::string> pending_records_;
    std::unordered_set<CandidateKey, CandidateKeyHash> dirty_candidates_;
    bool counters_dirty_ = false;
    bool auto_flush_ = false;
    bool replaying_ = false;
    std::filesystem::path dir_;
    std::unique_ptr<JournalFile> journal_;
};

}  // namespace bindwatch
