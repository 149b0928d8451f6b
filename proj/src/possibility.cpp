#include "bindwatch/possibility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <string>

namespace bindwatch {

double or_combine(std::span<const double> probs) {
    double acc = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError("probability out of range: " + std::to_string(p));
        acc = acc + p - acc * p;
    }
    return acc;
}

void add_hit(EvidenceSet& e, const MatchHit& hit, const PipelineConfig& cfg) {
    switch (hit.proto) {
        case Proto::ssl: e.ssl_seen = true; break;
        case Proto::dns: e.dns_seen = true; break;
        case Proto::http:
            e.http_seen = true;
            if (hit.fp_dist && (!e.best_dist || *hit.fp_dist < *e.best_dist)) {
                e.best_dist = hit.fp_dist;
                int dist = *hit.fp_dist;
                e.http_rejected = dist > cfg.sim_reject_dist;
                if (dist <= cfg.simhash_threshold_n) e.sim = (64.0 - dist) / 64.0;
                else e.sim.reset();
            }
            break;
    }
}

std::vector<EvidenceSet> window_merge(std::span<const MatchHit> hits, const PipelineConfig& cfg) {
    std::vector<EvidenceSet> out;
    for (const auto& hit : hits) {
        if (out.empty() || hit.ts >= out.back().window_start + cfg.window_secs) {
            EvidenceSet e;
            e.key = hit.key;
            e.window_start = hit.ts;
            out.push_back(std::move(e));
        }
        add_hit(out.back(), hit, cfg);
    }
    return out;
}

double score(const EvidenceSet& e, const PipelineConfig& cfg) {
    double parts[4];
    std::size_t n = 0;
    if (e.ssl_seen) parts[n++] = cfg.s;
    if (e.dns_seen) parts[n++] = cfg.d;
    if (e.http_seen && !e.http_rejected) {
        parts[n++] = cfg.h;
        if (e.sim && e.best_dist && *e.best_dist <= cfg.simhash_threshold_n) parts[n++] = *e.sim;
    }
    return or_combine(std::span<const double>(parts, n));
}

std::string_view to_string(Decision d) noexcept {
    switch (d) {
        case Decision::Publish: return "publish";
        case Decision::Recommend: return "recommend";
        case Decision::Hold: return "hold";
    }
    return "?";
}

Decision classify(double p, const PipelineConfig& cfg) {
    if (p >= cfg.t1) return Decision::Publish;
    if (p >= cfg.t2) return Decision::Recommend;
    return Decision::Hold;
}

std::string_view to_string(Status s) noexcept {
    switch (s) {
        case Status::Hold: return "hold";
        case Status::Recommended: return "recommended";
        case Status::Published: return "published";
        case Status::Verified: return "verified";
        case Status::Rejected: return "rejected";
    }
    return "?";
}

std::optional<Status> status_from_string(std::string_view text) noexcept {
    for (auto s : {Status::Hold, Status::Recommended, Status::Published, Status::Verified, Status::Rejected}) {
        if (to_string(s) == text) return s;
    }
    return std::nullopt;
}

PossibilityState new_state(const CandidateKey& key, double ts) {
    PossibilityState st;
    st.key = key;
    st.first_seen_ts = ts;
    st.last_seen_day = day_index(ts);
    return st;
}

Status status_for(double p, const PipelineConfig& cfg) {
    switch (classify(p, cfg)) {
        case Decision::Publish: return Status::Published;
        case Decision::Recommend: return Status::Recommended;
        case Decision::Hold: break;
    }
    return Status::Hold;
}

PossibilityState daily_update(PossibilityState st, bool seen_today, double now, const PipelineConfig& cfg) {
    if (st.status == Status::Verified) {
        if (st.verified_until && *st.verified_until <= now) {
            st.status = Status::Published;
            st.p = cfg.t1;
            st.verified_until.reset();
        }
        return st;
    }
    if (st.status == Status::Rejected) {
        if (st.rejected_until && *st.rejected_until <= now) {
            st.status = Status::Hold;
            st.rejected_until.reset();
        }
        st.p = 0.0;
        return st;
    }
    if (seen_today) {
        st.p = std::max(st.p, std::min(st.p + cfg.inc, cfg.t1));
    } else {
        st.p = std::max(st.p - cfg.dec, 0.0);
        if (st.p < 1e-9) st.p = 0.0;
    }
    st.p = std::clamp(st.p, 0.0, 1.0);
    st.status = status_for(st.p, cfg);
    return st;
}

PossibilityState apply_evidence(PossibilityState st, const EvidenceSet& e, const PipelineConfig& cfg) {
    if (st.status == Status::Rejected) return st;
    st.p = std::max(st.p, score(e, cfg));
    ++st.sightings;
    if (e.dns_seen) st.protocols |= 1u << static_cast<unsigned>(Proto::dns);
    if (e.http_seen) st.protocols |= 1u << static_cast<unsigned>(Proto::http);
    if (e.ssl_seen) st.protocols |= 1u << static_cast<unsigned>(Proto::ssl);
    st.last_seen_day = std::max(st.last_seen_day, day_index(e.window_start));
    if (st.status != Status::Verified) st.status = status_for(st.p, cfg);
    return st;
}

std::optional<EvidenceSet> WindowTracker::add(const MatchHit& hit, const PipelineConfig& cfg) {
    std::optional<EvidenceSet> closed;
    auto [it, inserted] = open_.try_emplace(hit.key);
    EvidenceSet& e = it->second;
    if (inserted || hit.ts >= e.window_start + cfg.window_secs) {
        if (!inserted) closed = std::move(e);
        e = EvidenceSet{};
        e.key = hit.key;
        e.window_start = hit.ts;
    }
    add_hit(e, hit, cfg);
    return closed;
}

std::vector<EvidenceSet> WindowTracker::close_before(double ts, const PipelineConfig& cfg) {
    std::vector<EvidenceSet> out;
    for (auto it = open_.begin(); it != open_.end();) {
        if (it->second.window_start + cfg.window_secs <= ts) {
            out.push_back(std::move(it->second));
            it = open_.erase(it);
        } else {
            ++it;
        }
    }
    std::sort(out.begin(), out.end(), [](const EvidenceSet& a, const EvidenceSet& b) {
        return std::tie(a.window_start, a.key) < std::tie(b.window_start, b.key);
    });
    return out;
}

std::vector<EvidenceSet> WindowTracker::close_all() {
    return close_before(std::numeric_limits<double>::infinity(), PipelineConfig{});
}

}  // namespace bindwatch
