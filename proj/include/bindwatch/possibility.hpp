#pragma once

// Evidence windows, probability combination, thresholds and the daily walk.

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bindwatch/match_filter.hpp"
#include "bindwatch/model.hpp"

namespace bindwatch {

class DomainError : public Error {
public:
    using Error::Error;
};

// 1 - prod(1 - p). Throws DomainError for values outside [0, 1].
double or_combine(std::span<const double> probs);
inline double or_combine(std::initializer_list<double> probs) {
    return or_combine(std::span<const double>(probs.begin(), probs.size()));
}

struct EvidenceSet {
    CandidateKey key;
    double window_start = 0.0;
    bool ssl_seen = false;
    bool dns_seen = false;
    bool http_seen = false;
    std::optional<double> sim;
    bool http_rejected = false;
    std::optional<int> best_dist;

    friend bool operator==(const EvidenceSet&, const EvidenceSet&) = default;
};

// Folds one hit into `e`; the lowest fingerprint distance in the window decides
// sim / http_rejected.
void add_hit(EvidenceSet& e, const MatchHit& hit, const PipelineConfig& cfg);

// Tumbling windows anchored at the first hit of each window. `hits` must be
// sorted by ts and share one key.
std::vector<EvidenceSet> window_merge(std::span<const MatchHit> hits, const PipelineConfig& cfg);

double score(const EvidenceSet& e, const PipelineConfig& cfg);

enum class Decision : std::uint8_t { Publish, Recommend, Hold };
std::string_view to_string(Decision d) noexcept;

Decision classify(double p, const PipelineConfig& cfg);

enum class Status : std::uint8_t { Hold, Recommended, Published, Verified, Rejected };
std::string_view to_string(Status s) noexcept;
std::optional<Status> status_from_string(std::string_view text) noexcept;

struct PossibilityState {
    CandidateKey key;
    double p = 0.0;
    Status status = Status::Hold;
    std::int64_t last_seen_day = 0;
    std::optional<double> verified_until;
    std::optional<double> rejected_until;
    std::optional<double> last_probe_ts;
    double first_seen_ts = 0.0;
    std::uint64_t sightings = 0;
    std::uint8_t protocols = 0;  // bit (1 << Proto) for every protocol seen

    bool seen(Proto proto) const noexcept { return protocols & (1u << static_cast<unsigned>(proto)); }

    friend bool operator==(const PossibilityState&, const PossibilityState&) = default;
};

PossibilityState new_state(const CandidateKey& key, double ts);

// Status implied by p when no verdict pins it.
Status status_for(double p, const PipelineConfig& cfg);

// One UTC day rollover. `now` is the first instant of the new day.
PossibilityState daily_update(PossibilityState state, bool seen_today, double now, const PipelineConfig& cfg);

// p' = max(p, score(e)), one sighting per call; Verified and Rejected are
// sticky.
PossibilityState apply_evidence(PossibilityState state, const EvidenceSet& e, const PipelineConfig& cfg);

// Open window per key, for streaming ingestion. Windows are handed back once
// closed: by a later hit beyond the window, or by the close_* sweeps.
class WindowTracker {
public:
    // Returns the previous window for the key when this hit opens a new one.
    std::optional<EvidenceSet> add(const MatchHit& hit, const PipelineConfig& cfg);
    std::vector<EvidenceSet> close_before(double ts, const PipelineConfig& cfg);
    std::vector<EvidenceSet> close_all();
    std::size_t open_windows() const noexcept { return open_.size(); }

private:
    std::unordered_map<CandidateKey, EvidenceSet, CandidateKeyHash> open_;
};

}  // namespace bindwatch
