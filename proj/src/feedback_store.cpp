#include "bindwatch/feedback_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bindwatch/events_io.hpp"

namespace bindwatch {

using nlohmann::json;

StoreCounters& StoreCounters::operator+=(const StoreCounters& o) noexcept {
    events_ingested += o.events_ingested;
    hits += o.hits;
    filtered_cdn += o.filtered_cdn;
    filtered_url += o.filtered_url;
    return *this;
}

std::string_view to_string(VerdictValue v) noexcept {
    switch (v) {
        case VerdictValue::Correct: return "correct";
        case VerdictValue::Incorrect: return "incorrect";
        case VerdictValue::Uncertain: return "uncertain";
    }
    return "?";
}

std::string_view to_string(VerdictSource s) noexcept { return s == VerdictSource::human ? "human" : "auto"; }

std::optional<VerdictValue> verdict_from_string(std::string_view text) noexcept {
    if (text == "correct") return VerdictValue::Correct;
    if (text == "incorrect") return VerdictValue::Incorrect;
    if (text == "uncertain") return VerdictValue::Uncertain;
    return std::nullopt;
}

// ------------------------------------------------------------ JSON forms

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json opt(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }
json opt(const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); }

template <typename T>
std::optional<T> get_opt(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<T>();
}

// Parse errors inside the store formats surface as json exceptions and are
// translated by the callers.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

DomainName domain_of(const json& j) {
    auto d = try_canonicalize_domain(j.get_ref<const std::string&>());
    if (!d) throw FormatError("bad domain " + j.get<std::string>());
    return *d;
}

IpAddr ip_of(const json& j) {
    auto ip = IpAddr::try_parse(j.get_ref<const std::string&>());
    if (!ip) throw FormatError("bad ip " + j.get<std::string>());
    return *ip;
}

void key_to(json& j, const CandidateKey& k) {
    j["ip"] = k.ip.to_string();
    j["domain"] = k.domain.str();
}

CandidateKey key_from(const json& j) { return CandidateKey{ip_of(j.at("ip")), domain_of(j.at("domain"))}; }

json state_json(const PossibilityState& st) {
    json j;
    key_to(j, st.key);
    j["p"] = st.p;
    j["status"] = std::string(to_string(st.status));
    j["last_seen_day"] = st.last_seen_day;
    j["verified_until"] = opt(st.verified_until);
    j["rejected_until"] = opt(st.rejected_until);
    j["last_probe_ts"] = opt(st.last_probe_ts);
    j["first_seen_ts"] = st.first_seen_ts;
    j["sightings"] = st.sightings;
    j["protocols"] = st.protocols;
    return j;
}

PossibilityState state_from(const json& j) {
    PossibilityState st;
    st.key = key_from(j);
    st.p = j.at("p").get<double>();
    if (!(st.p >= 0.0 && st.p <= 1.0)) throw FormatError("p out of range");
    auto status = status_from_string(j.at("status").get_ref<const std::string&>());
    if (!status) throw FormatError("bad status");
    st.status = *status;
    st.last_seen_day = j.at("last_seen_day").get<std::int64_t>();
    st.verified_until = get_opt<double>(j, "verified_until");
    st.rejected_until = get_opt<double>(j, "rejected_until");
    st.last_probe_ts = get_opt<double>(j, "last_probe_ts");
    st.first_seen_ts = j.at("first_seen_ts").get<double>();
    st.sightings = j.at("sightings").get<std::uint64_t>();
    st.protocols = j.at("protocols").get<std::uint8_t>();
    return st;
}

json watch_json(const WatchlistEntry& e) {
    json j;
    j["kind"] = std::string(to_string(e.spec.kind));
    j["value"] = e.spec.value;
    j["source"] = std::string(to_string(e.spec.source));
    j["created_ts"] = e.created_ts;
    if (e.origin_key) {
        json k;
        key_to(k, *e.origin_key);
        j["origin_key"] = std::move(k);
    } else {
        j["origin_key"] = nullptr;
    }
    j["last_supported_day"] = e.last_supported_day;
    return j;
}

SpecificString spec_from(const json& j, SpecSource default_source = SpecSource::user) {
    auto kind = spec_kind_from_string(j.at("kind").get_ref<const std::string&>());
    if (!kind) throw FormatError("bad kind");
    SpecSource source = default_source;
    if (auto it = j.find("source"); it != j.end()) {
        auto s = spec_source_from_string(it->get_ref<const std::string&>());
        if (!s) throw FormatError("bad source");
        source = *s;
    }
    return make_specific_string(*kind, j.at("value").get_ref<const std::string&>(), source);
}

WatchlistEntry watch_from(const json& j) {
    WatchlistEntry e;
    e.spec = spec_from(j);
    e.created_ts = j.at("created_ts").get<double>();
    if (auto it = j.find("origin_key"); it != j.end() && !it->is_null()) e.origin_key = key_from(*it);
    e.last_supported_day = j.at("last_supported_day").get<std::int64_t>();
    return e;
}

json ref_json(const std::optional<ReferenceFingerprint>& r) {
    if (!r) return nullptr;
    return json::parse(reference_to_json_line(*r));
}

std::optional<ReferenceFingerprint> ref_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    auto r = parse_reference_line(j.dump());
    if (!r) throw FormatError("bad reference");
    return r;
}

json slot_json(const ReferenceSlot& s) {
    return json{{"domain", s.domain.str()}, {"active", ref_json(s.active)}, {"pending", ref_json(s.pending)}};
}

ReferenceSlot slot_from(const json& j) {
    return ReferenceSlot{domain_of(j.at("domain")), ref_from(j.at("active")), ref_from(j.at("pending"))};
}

json verdict_json(const Verdict& v) {
    json j;
    key_to(j, v.key);
    j["verdict"] = std::string(to_string(v.value));
    j["source"] = std::string(to_string(v.source));
    j["ts"] = v.ts;
    j["expires_ts"] = v.expires_ts;
    return j;
}

Verdict verdict_from(const json& j) {
    Verdict v;
    v.key = key_from(j);
    auto value = verdict_from_string(j.at("verdict").get_ref<const std::string&>());
    if (!value) throw FormatError("bad verdict");
    v.value = *value;
    const auto& source = j.at("source").get_ref<const std::string&>();
    if (source == "human") v.source = VerdictSource::human;
    else if (source == "auto") v.source = VerdictSource::automatic;
    else throw FormatError("bad verdict source");
    v.ts = j.at("ts").get<double>();
    v.expires_ts = j.at("expires_ts").get<double>();
    return v;
}

json review_json(const ReviewItem& r) {
    json j;
    j["id"] = r.id;
    key_to(j, r.key);
    j["evidence_summary"] = {{"ssl", r.evidence.ssl}, {"dns", r.evidence.dns}, {"http", r.evidence.http}, {"p", r.evidence.p}};
    j["page_excerpt_b64"] = base64_encode(r.page_excerpt);
    j["dist"] = opt(r.dist);
    j["created_ts"] = r.created_ts;
    j["state"] = r.state == ReviewState::pending ? "pending" : "resolved";
    j["verdict"] = r.verdict ? verdict_json(*r.verdict) : json(nullptr);
    return j;
}

ReviewItem review_from(const json& j) {
    ReviewItem r;
    r.id = j.at("id").get<std::string>();
    r.key = key_from(j);
    const auto& ev = j.at("evidence_summary");
    r.evidence = EvidenceSummary{ev.at("ssl").get<bool>(), ev.at("dns").get<bool>(), ev.at("http").get<bool>(),
                                 ev.at("p").get<double>()};
    auto excerpt = base64_decode(j.at("page_excerpt_b64").get_ref<const std::string&>());
    if (!excerpt) throw FormatError("bad excerpt");
    r.page_excerpt = std::move(*excerpt);
    r.dist = get_opt<int>(j, "dist");
    r.created_ts = j.at("created_ts").get<double>();
    const auto& state = j.at("state").get_ref<const std::string&>();
    if (state == "pending") r.state = ReviewState::pending;
    else if (state == "resolved") r.state = ReviewState::resolved;
    else throw FormatError("bad review state");
    if (auto it = j.find("verdict"); it != j.end() && !it->is_null()) r.verdict = verdict_from(*it);
    return r;
}

json counters_json(const StoreCounters& c) {
    return json{{"events_ingested", c.events_ingested},
                {"hits", c.hits},
                {"filtered_cdn", c.filtered_cdn},
                {"filtered_url", c.filtered_url}};
}

StoreCounters counters_from(const json& j) {
    return StoreCounters{j.at("events_ingested").get<std::uint64_t>(), j.at("hits").get<std::uint64_t>(),
                         j.at("filtered_cdn").get<std::uint64_t>(), j.at("filtered_url").get<std::uint64_t>()};
}

std::optional<std::uint64_t> review_number(std::string_view id) {
    if (!id.starts_with("r-") || id.size() < 3 || id.size() > 22) return std::nullopt;
    std::uint64_t n = 0;
    for (char c : id.substr(2)) {
        if (c < '0' || c > '9') return std::nullopt;
        n = n * 10 + static_cast<std::uint64_t>(c - '0');
    }
    return n;
}

}  // namespace

std::string published_to_json_line(const PublishedEntry& e) {
    json j;
    key_to(j, e.key);
    j["possibility"] = e.p;
    j["status"] = std::string(to_string(e.status));
    j["valid_until"] = opt(e.valid_until);
    return j.dump();
}

std::string snapshot_to_json(const StoreSnapshot& snap) {
    json j;
    j["schema_version"] = snap.schema_version;
    j["current_day"] = opt(snap.current_day);
    j["next_review_id"] = snap.next_review_id;
    j["counters"] = counters_json(snap.counters);
    auto& candidates = j["candidates"] = json::array();
    for (const auto& st : snap.candidates) candidates.push_back(state_json(st));
    auto& watch = j["watchlist"] = json::array();
    for (const auto& e : snap.watchlist) watch.push_back(watch_json(e));
    auto& refs = j["references"] = json::array();
    for (const auto& s : snap.references) refs.push_back(slot_json(s));
    auto& cdn = j["cdn_ips"] = json::array();
    for (const auto& ip : snap.cdn_ips) cdn.push_back(ip.to_string());
    auto& reviews = j["reviews"] = json::array();
    for (const auto& r : snap.reviews) reviews.push_back(review_json(r));
    auto& verdicts = j["verdicts"] = json::array();
    for (const auto& v : snap.verdicts) verdicts.push_back(verdict_json(v));
    return j.dump();
}

StoreSnapshot snapshot_from_json(std::string_view text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw CorruptSnapshot("snapshot is not valid JSON");
    auto version = j.find("schema_version");
    if (version == j.end() || !version->is_number_integer()) throw CorruptSnapshot("snapshot has no schema_version");
    if (version->get<int>() != kSchemaVersion) {
        throw SchemaMismatch("snapshot schema_version " + version->dump() + ", expected " +
                             std::to_string(kSchemaVersion));
    }
    try {
        StoreSnapshot snap;
        snap.current_day = get_opt<std::int64_t>(j, "current_day");
        snap.next_review_id = j.at("next_review_id").get<std::uint64_t>();
        snap.counters = counters_from(j.at("counters"));
        for (const auto& x : j.at("candidates")) snap.candidates.push_back(state_from(x));
        for (const auto& x : j.at("watchlist")) snap.watchlist.push_back(watch_from(x));
        for (const auto& x : j.at("references")) snap.references.push_back(slot_from(x));
        for (const auto& x : j.at("cdn_ips")) snap.cdn_ips.push_back(ip_of(x));
        for (const auto& x : j.at("reviews")) snap.reviews.push_back(review_from(x));
        for (const auto& x : j.at("verdicts")) snap.verdicts.push_back(verdict_from(x));
        return snap;
    } catch (const json::exception& e) {
        throw CorruptSnapshot(std::string("snapshot: ") + e.what());
    } catch (const FormatError& e) {
        throw CorruptSnapshot(std::string("snapshot: ") + e.what());
    } catch (const InvalidSpec& e) {
        throw CorruptSnapshot(std::string("snapshot: ") + e.what());
    }
}

// ------------------------------------------------------------ journal file

struct Store::JournalFile {
    std::FILE* file = nullptr;

    explicit JournalFile(const std::filesystem::path& path) {
        file = std::fopen(path.c_str(), "ab");
        if (!file) throw StoreError("cannot open journal " + path.string());
    }
    ~JournalFile() {
        if (file) std::fclose(file);
    }

    void append(const std::vector<std::string>& lines) {
        for (const auto& line : lines) {
            if (std::fwrite(line.data(), 1, line.size(), file) != line.size() || std::fputc('\n', file) == EOF) {
                throw StoreError("journal write failed");
            }
        }
        if (std::fflush(file) != 0 || ::fsync(fileno(file)) != 0) throw StoreError("journal sync failed");
    }
};

// ------------------------------------------------------------ store

Store::Store(PipelineConfig cfg, Clock clock) : cfg_(std::move(cfg)), clock_(std::move(clock)) {
    validate(cfg_);
    cdn_ips_.on_insert([this](const IpAddr& ip) { journal("cdn_ip", json{{"ip", ip.to_string()}}.dump()); });
}

Store::~Store() {
    try {
        flush();
    } catch (...) {
    }
}

std::unique_ptr<Store> Store::open(const std::filesystem::path& dir, PipelineConfig cfg, Clock clock) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw StoreError("cannot create store directory " + dir.string() + ": " + ec.message());
    auto store = std::make_unique<Store>(std::move(cfg), std::move(clock));
    store->dir_ = dir;
    auto snap = dir / "snapshot.json";
    if (std::filesystem::exists(snap)) store->restore(snap);
    auto journal_path = dir / "journal.jsonl";
    if (std::filesystem::exists(journal_path)) store->replay_journal(journal_path);
    store->journal_ = std::make_unique<JournalFile>(journal_path);
    return store;
}

void Store::set_auto_flush(bool on) {
    std::lock_guard lock(journal_mutex_);
    auto_flush_ = on;
}

void Store::journal(std::string op, std::string data_json) {
    if (replaying_) return;
    std::lock_guard lock(journal_mutex_);
    if (dir_.empty()) return;
    std::string line = "{\"op\":";
    line += json(op).dump();
    line += ",\"ts\":";
    line += json(clock_()).dump();
    line += ",\"data\":";
    line += data_json;
    line += '}';
    pending_records_.push_back(std::move(line));
}

void Store::flush() {
    std::shared_lock lock(mutex_);
    flush_locked();
}

void Store::flush_locked() {
    std::lock_guard lock(journal_mutex_);
    if (!journal_) {
        pending_records_.clear();
        dirty_candidates_.clear();
        counters_dirty_ = false;
        return;
    }
    std::vector<std::string> lines = std::move(pending_records_);
    pending_records_.clear();
    for (const auto& key : dirty_candidates_) {
        auto it = candidates_.find(key);
        if (it == candidates_.end()) continue;
        lines.push_back(json{{"op", "upsert_candidate"}, {"ts", clock_()}, {"data", state_json(it->second)}}.dump());
    }
    dirty_candidates_.clear();
    if (counters_dirty_) {
        lines.push_back(json{{"op", "counters"}, {"ts", clock_()}, {"data", counters_json(counters_)}}.dump());
        counters_dirty_ = false;
    }
    if (!lines.empty()) journal_->append(lines);
}

void Store::maybe_flush_locked() {
    bool now;
    {
        std::lock_guard lock(journal_mutex_);
        now = auto_flush_;
    }
    if (now) flush_locked();
}

void Store::replay_journal(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreError("cannot read journal " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t complete = content.rfind('\n');
    complete = complete == std::string::npos ? 0 : complete + 1;

    replaying_ = true;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    try {
        while (pos < complete) {
            auto nl = content.find('\n', pos);
            std::string_view line(content.data() + pos, nl - pos);
            ++line_no;
            if (!line.empty()) apply_record(line);
            pos = nl + 1;
        }
    } catch (const Error& e) {
        replaying_ = false;
        throw StoreError("journal line " + std::to_string(line_no) + ": " + e.what());
    }
    replaying_ = false;
    // An unterminated tail was never acknowledged; drop it before appending.
    if (complete < content.size()) std::filesystem::resize_file(path, complete);
}

void Store::apply_record(std::string_view line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw CorruptSnapshot("unparseable record");
    try {
        const auto& op = j.at("op").get_ref<const std::string&>();
        const json& data = j.at("data");
        std::unique_lock lock(mutex_);
        if (op == "upsert_candidate") {
            set_candidate_locked(state_from(data));
        } else if (op == "add_watch") {
            put_watch_locked(watch_from(data));
        } else if (op == "remove_watch") {
            auto spec = spec_from(data);
            if (watchlist_.erase({spec.kind, spec.value})) ++watch_version_;
        } else if (op == "reference") {
            auto slot = slot_from(data);
            references_[slot.domain] = slot;
        } else if (op == "review") {
            put_review_locked(review_from(data));
        } else if (op == "verdict") {
            auto v = verdict_from(data);
            verdicts_[v.key] = v;
        } else if (op == "cdn_ip") {
            cdn_ips_.insert(ip_of(data.at("ip")));
        } else if (op == "counters") {
            counters_ = counters_from(data);
        } else if (op == "day") {
            current_day_ = get_opt<std::int64_t>(data, "current_day");
        } else {
            throw CorruptSnapshot("unknown op " + op);
        }
    } catch (const json::exception& e) {
        throw CorruptSnapshot(e.what());
    } catch (const FormatError& e) {
        throw CorruptSnapshot(e.what());
    }
}

void Store::set_candidate_locked(const PossibilityState& st) {
    candidates_[st.key] = st;
    if (!replaying_) {
        std::lock_guard lock(journal_mutex_);
        if (!dir_.empty()) dirty_candidates_.insert(st.key);
    }
    if (st.p >= cfg_.t2 && st.status != Status::Rejected) feedback_dirty_.insert(st.key);
}

void Store::put_watch_locked(const WatchlistEntry& e) {
    watchlist_[{e.spec.kind, e.spec.value}] = e;
    ++watch_version_;
}

void Store::put_review_locked(const ReviewItem& item) {
    auto n = review_number(item.id);
    if (!n) throw FormatError("bad review id " + item.id);
    reviews_[*n] = item;
    next_review_id_ = std::max(next_review_id_, *n + 1);
    if (item.state == ReviewState::pending) pending_by_key_[item.key] = item.id;
    else if (auto it = pending_by_key_.find(item.key); it != pending_by_key_.end() && it->second == item.id) {
        pending_by_key_.erase(it);
    }
}

// --- watchlist

Store::AddResult Store::add_user_string(const SpecificString& raw) {
    SpecificString spec = make_specific_string(raw.kind, raw.value, SpecSource::user);
    std::unique_lock lock(mutex_);
    if (auto it = watchlist_.find({spec.kind, spec.value}); it != watchlist_.end()) return {it->second, false};
    WatchlistEntry e{spec, clock_(), std::nullopt, current_day_.value_or(0)};
    put_watch_locked(e);
    journal("add_watch", watch_json(e).dump());
    maybe_flush_locked();
    return {e, true};
}

bool Store::remove_watch(const SpecificString& raw) {
    SpecificString spec = make_specific_string(raw.kind, raw.value, SpecSource::user);
    std::unique_lock lock(mutex_);
    if (!watchlist_.erase({spec.kind, spec.value})) return false;
    ++watch_version_;
    journal("remove_watch", json{{"kind", std::string(to_string(spec.kind))}, {"value", spec.value}}.dump());
    maybe_flush_locked();
    return true;
}

std::vector<WatchlistEntry> Store::watchlist() const {
    std::shared_lock lock(mutex_);
    std::vector<WatchlistEntry> out;
    out.reserve(watchlist_.size());
    for (const auto& [k, e] : watchlist_) out.push_back(e);
    return out;
}

std::uint64_t Store::watch_version() const {
    std::shared_lock lock(mutex_);
    return watch_version_;
}

void Store::ensure_auto_entry_locked(const PossibilityState& st, std::vector<WatchlistEntry>* created) {
    if (st.p < cfg_.t2 || st.status == Status::Rejected) return;
    std::pair<SpecKind, std::string> k{SpecKind::ip, st.key.ip.to_string()};
    auto it = watchlist_.find(k);
    std::int64_t today = current_day_.value_or(day_index(clock_()));
    if (it != watchlist_.end()) {
        if (it->second.spec.source == SpecSource::automatic && it->second.last_supported_day < today) {
            it->second.last_supported_day = today;
            journal("add_watch", watch_json(it->second).dump());
        }
        return;
    }
    WatchlistEntry e{SpecificString{SpecKind::ip, k.second, SpecSource::automatic}, clock_(), st.key, today};
    put_watch_locked(e);
    journal("add_watch", watch_json(e).dump());
    if (created) created->push_back(e);
}

std::vector<WatchlistEntry> Store::auto_generate_ip_strings() {
    std::unique_lock lock(mutex_);
    std::vector<WatchlistEntry> created;
    if (feedback_full_sweep_) {
        for (const auto& [key, st] : candidates_) ensure_auto_entry_locked(st, &created);
        feedback_full_sweep_ = false;
    } else {
        std::vector<CandidateKey> keys(feedback_dirty_.begin(), feedback_dirty_.end());
        std::sort(keys.begin(), keys.end());
        for (const auto& key : keys) {
            if (auto it = candidates_.find(key); it != candidates_.end()) ensure_auto_entry_locked(it->second, &created);
        }
    }
    feedback_dirty_.clear();
    maybe_flush_locked();
    return created;
}

// --- candidates

void Store::upsert_candidate(const PossibilityState& st) {
    if (!(st.p >= 0.0 && st.p <= 1.0)) throw DomainError("p out of range");
    std::unique_lock lock(mutex_);
    set_candidate_locked(st);
    maybe_flush_locked();
}

PossibilityState Store::get_candidate(const CandidateKey& key) const {
    auto st = find_candidate(key);
    if (!st) throw NotFound("no candidate " + key.ip.to_string() + " " + key.domain.str());
    return *st;
}

std::optional<PossibilityState> Store::find_candidate(const CandidateKey& key) const {
    std::shared_lock lock(mutex_);
    auto it = candidates_.find(key);
    if (it == candidates_.end()) return std::nullopt;
    return it->second;
}

std::vector<PossibilityState> Store::list_candidates(const CandidateFilter& f) const {
    std::shared_lock lock(mutex_);
    std::vector<PossibilityState> out;
    for (const auto& [key, st] : candidates_) {
        if (f.status && st.status != *f.status) continue;
        if (f.min_p && st.p < *f.min_p) continue;
        if (f.domain && !matches_domain(f.domain->str(), st.key.domain)) continue;
        out.push_back(st);
    }
    std::sort(out.begin(), out.end(), [](const PossibilityState& a, const PossibilityState& b) {
        return std::tie(a.key.domain, a.key.ip) < std::tie(b.key.domain, b.key.ip);
    });
    return out;
}

std::size_t Store::candidate_count() const {
    std::shared_lock lock(mutex_);
    return candidates_.size();
}

std::vector<PublishedEntry> Store::publish_list(double now) const {
    std::shared_lock lock(mutex_);
    std::vector<PublishedEntry> out;
    for (const auto& [key, st] : candidates_) {
        if (st.status == Status::Verified) {
            if (st.verified_until && *st.verified_until > now) out.push_back({key, st.p, st.status, st.verified_until});
        } else if (st.status == Status::Published && st.p >= cfg_.t1) {
            out.push_back({key, st.p, st.status, std::nullopt});
        }
    }
    std::sort(out.begin(), out.end(), [](const PublishedEntry& a, const PublishedEntry& b) {
        if (a.key.domain != b.key.domain) return a.key.domain < b.key.domain;
        if (a.p != b.p) return a.p > b.p;
        return a.key.ip < b.key.ip;
    });
    return out;
}

void Store::rollover_to(std::int64_t day) {
    std::unique_lock lock(mutex_);
    if (!current_day_) {
        current_day_ = day;
        journal("day", json{{"current_day", day}}.dump());
        return;
    }
    if (day <= *current_day_) return;
    for (std::int64_t d = *current_day_; d < day; ++d) {
        double start_of_next = static_cast<double>(d + 1) * kSecondsPerDay;
        std::unordered_set<IpAddr, IpAddrHash> supported;
        for (auto& [key, st] : candidates_) {
            PossibilityState next = daily_update(st, st.last_seen_day == d, start_of_next, cfg_);
            if (!(next == st)) set_candidate_locked(next);
            if (next.p >= cfg_.t2 && next.status != Status::Rejected) supported.insert(key.ip);
        }
        for (auto it = watchlist_.begin(); it != watchlist_.end();) {
            WatchlistEntry& e = it->second;
            if (e.spec.source != SpecSource::automatic) {
                ++it;
                continue;
            }
            auto ip = IpAddr::try_parse(e.spec.value);
            if (ip && supported.contains(*ip)) {
                e.last_supported_day = d + 1;
                ++it;
            } else if (d + 1 - e.last_supported_day >= kAutoEntryQuietDays) {
                journal("remove_watch", json{{"kind", "ip"}, {"value", e.spec.value}, {"source", "auto"}}.dump());
                it = watchlist_.erase(it);
                ++watch_version_;
            } else {
                ++it;
            }
        }
    }
    // Supported-day bookkeeping changed in place; re-journal auto entries.
    for (const auto& [k, e] : watchlist_) {
        if (e.spec.source == SpecSource::automatic) journal("add_watch", watch_json(e).dump());
    }
    current_day_ = day;
    journal("day", json{{"current_day", day}}.dump());
    maybe_flush_locked();
}

std::optional<std::int64_t> Store::current_day() const {
    std::shared_lock lock(mutex_);
    return current_day_;
}

// --- references

void Store::put_pending_reference(const ReferenceFingerprint& ref) {
    std::unique_lock lock(mutex_);
    auto& slot = references_[ref.domain];
    slot.domain = ref.domain;
    slot.pending = ref;
    journal("reference", slot_json(slot).dump());
    maybe_flush_locked();
}

void Store::confirm_reference(const DomainName& domain) {
    std::unique_lock lock(mutex_);
    auto it = references_.find(domain);
    if (it == references_.end() || !it->second.pending) throw NotFound("no pending reference for " + domain.str());
    it->second.active = it->second.pending;
    it->second.pending.reset();
    journal("reference", slot_json(it->second).dump());
    maybe_flush_locked();
}

std::optional<Fingerprint> Store::reference_for(const DomainName& host) const {
    std::shared_lock lock(mutex_);
    for (DomainName name = host; !name.empty(); name = name.parent()) {
        auto it = references_.find(name);
        if (it != references_.end() && it->second.active && it->second.active->version == kFingerprintVersion) {
            return it->second.active->fp;
        }
    }
    return std::nullopt;
}

std::vector<ReferenceSlot> Store::references() const {
    std::shared_lock lock(mutex_);
    std::vector<ReferenceSlot> out;
    for (const auto& [d, s] : references_) out.push_back(s);
    return out;
}

// --- verdicts and review

PossibilityState Store::apply_verdict_locked(const Verdict& v) {
    verdicts_[v.key] = v;
    journal("verdict", verdict_json(v).dump());
    PossibilityState st;
    if (auto it = candidates_.find(v.key); it != candidates_.end()) st = it->second;
    else st = new_state(v.key, v.ts);
    switch (v.value) {
        case VerdictValue::Correct:
            st.status = Status::Verified;
            st.p = 1.0;
            st.verified_until = v.expires_ts;
            st.rejected_until.reset();
            break;
        case VerdictValue::Incorrect:
            st.status = Status::Rejected;
            st.p = 0.0;
            st.rejected_until = v.expires_ts;
            st.verified_until.reset();
            break;
        case VerdictValue::Uncertain:
            break;
    }
    if (v.source == VerdictSource::automatic) st.last_probe_ts = v.ts;
    set_candidate_locked(st);
    return st;
}

PossibilityState Store::apply_verdict(const Verdict& v) {
    std::unique_lock lock(mutex_);
    auto st = apply_verdict_locked(v);
    maybe_flush_locked();
    return st;
}

std::optional<Verdict> Store::last_verdict(const CandidateKey& key) const {
    std::shared_lock lock(mutex_);
    auto it = verdicts_.find(key);
    if (it == verdicts_.end()) return std::nullopt;
    return it->second;
}

void Store::mark_probed(const CandidateKey& key, double ts) {
    std::unique_lock lock(mutex_);
    auto it = candidates_.find(key);
    if (it == candidates_.end()) return;
    PossibilityState st = it->second;
    st.last_probe_ts = ts;
    set_candidate_locked(st);
    maybe_flush_locked();
}

ReviewItem Store::enqueue_review(const CandidateKey& key, std::string_view page, std::optional<int> dist) {
    std::unique_lock lock(mutex_);
    if (auto it = pending_by_key_.find(key); it != pending_by_key_.end()) {
        return reviews_.at(*review_number(it->second));
    }
    ReviewItem item;
    item.id = "r-" + std::to_string(next_review_id_);
    item.key = key;
    if (auto it = candidates_.find(key); it != candidates_.end()) {
        const auto& st = it->second;
        item.evidence = EvidenceSummary{st.seen(Proto::ssl), st.seen(Proto::dns), st.seen(Proto::http), st.p};
    }
    item.page_excerpt = std::string(page.substr(0, kPageExcerptBytes));
    item.dist = dist;
    item.created_ts = clock_();
    put_review_locked(item);
    journal("review", review_json(item).dump());
    maybe_flush_locked();
    return item;
}

PossibilityState Store::apply_human_verdict(const std::string& id, VerdictValue value) {
    if (value == VerdictValue::Uncertain) throw InvalidVerdict("human verdicts are correct or incorrect");
    std::unique_lock lock(mutex_);
    auto n = review_number(id);
    auto it = n ? reviews_.find(*n) : reviews_.end();
    if (it == reviews_.end()) throw NotFound("no review item " + id);
    if (it->second.state == ReviewState::resolved) throw AlreadyResolved("review item " + id + " already resolved");
    double now = clock_();
    Verdict v{it->second.key, value, VerdictSource::human, now, now + cfg_.verdict_ttl_secs};
    auto st = apply_verdict_locked(v);
    ReviewItem item = it->second;
    item.state = ReviewState::resolved;
    item.verdict = v;
    put_review_locked(item);
    journal("review", review_json(item).dump());
    maybe_flush_locked();
    return st;
}

ReviewItem Store::get_review(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto n = review_number(id);
    auto it = n ? reviews_.find(*n) : reviews_.end();
    if (it == reviews_.end()) throw NotFound("no review item " + id);
    return it->second;
}

std::vector<ReviewItem> Store::pending_reviews() const {
    std::shared_lock lock(mutex_);
    std::vector<ReviewItem> out;
    for (const auto& [n, item] : reviews_) {
        if (item.state == ReviewState::pending) out.push_back(item);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ReviewItem& a, const ReviewItem& b) { return a.created_ts < b.created_ts; });
    return out;
}

// --- counters

void Store::add_counters(const StoreCounters& delta) {
    std::unique_lock lock(mutex_);
    counters_ += delta;
    {
        std::lock_guard jl(journal_mutex_);
        counters_dirty_ = true;
    }
    maybe_flush_locked();
}

StoreCounters Store::counters() const {
    std::shared_lock lock(mutex_);
    return counters_;
}

// --- persistence

StoreSnapshot Store::state() const {
    std::shared_lock lock(mutex_);
    return state_locked();
}

StoreSnapshot Store::state_locked() const {
    StoreSnapshot snap;
    snap.current_day = current_day_;
    snap.next_review_id = next_review_id_;
    snap.counters = counters_;
    for (const auto& [k, st] : candidates_) snap.candidates.push_back(st);
    for (const auto& [k, e] : watchlist_) snap.watchlist.push_back(e);
    for (const auto& [d, s] : references_) snap.references.push_back(s);
    snap.cdn_ips = cdn_ips_.items();
    for (const auto& [n, r] : reviews_) snap.reviews.push_back(r);
    for (const auto& [k, v] : verdicts_) snap.verdicts.push_back(v);
    return snap;
}

void Store::load_state(StoreSnapshot snap) {
    std::unique_lock lock(mutex_);
    bool was_replaying = replaying_;
    replaying_ = true;
    candidates_.clear();
    watchlist_.clear();
    references_.clear();
    reviews_.clear();
    pending_by_key_.clear();
    verdicts_.clear();
    cdn_ips_.clear();
    current_day_ = snap.current_day;
    counters_ = snap.counters;
    next_review_id_ = snap.next_review_id;
    for (auto& st : snap.candidates) candidates_[st.key] = std::move(st);
    for (auto& e : snap.watchlist) watchlist_[{e.spec.kind, e.spec.value}] = std::move(e);
    for (auto& s : snap.references) references_[s.domain] = std::move(s);
    for (const auto& ip : snap.cdn_ips) cdn_ips_.insert(ip);
    for (const auto& r : snap.reviews) put_review_locked(r);
    next_review_id_ = std::max(next_review_id_, snap.next_review_id);
    for (auto& v : snap.verdicts) verdicts_[v.key] = std::move(v);
    ++watch_version_;
    feedback_full_sweep_ = true;
    feedback_dirty_.clear();
    replaying_ = was_replaying;
}

void Store::snapshot(const std::filesystem::path& path) const { write_snapshot(path, snapshot_to_json(state())); }

void Store::write_snapshot(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::FILE* f = std::fopen(tmp.c_str(), "wb");
        if (!f) throw StoreError("cannot write " + tmp.string());
        bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size() && std::fflush(f) == 0 &&
                  ::fsync(fileno(f)) == 0;
        std::fclose(f);
        if (!ok) throw StoreError("snapshot write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw StoreError("snapshot rename failed: " + ec.message());
}

void Store::restore(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreError("cannot read " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    load_state(snapshot_from_json(text));
}

void Store::checkpoint() {
    if (dir_.empty()) return;
    std::unique_lock lock(mutex_);
    flush_locked();
    write_snapshot(dir_ / "snapshot.json", snapshot_to_json(state_locked()));
    std::lock_guard jl(journal_mutex_);
    journal_.reset();
    std::filesystem::resize_file(dir_ / "journal.jsonl", 0);
    journal_ = std::make_unique<JournalFile>(dir_ / "journal.jsonl");
}

}  // namespace bindwatch
