#include "bindwatch/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <httplib.h>
#include <json.hpp>

#include "bindwatch/active_probe.hpp"
#include "bindwatch/fingerprint.hpp"
#include "bindwatch/match_filter.hpp"
#include "bindwatch/pipeline.hpp"

namespace bindwatch {

using nlohmann::json;

double recall(const ConfusionMatrix& cm) {
    auto den = cm.n_cc + cm.n_ci;
    if (den == 0) throw UndefinedMetric("recall: no correct pairs");
    return static_cast<double>(cm.n_cc) / static_cast<double>(den);
}

double accuracy(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw UndefinedMetric("accuracy: empty matrix");
    return static_cast<double>(cm.n_cc + cm.n_ii) / static_cast<double>(cm.total());
}

double precision(const ConfusionMatrix& cm) {
    auto den = cm.n_cc + cm.n_ic;
    if (den == 0) throw UndefinedMetric("precision: nothing judged correct");
    return static_cast<double>(cm.n_cc) / static_cast<double>(den);
}

// ------------------------------------------------------------- scenario

SyntheticScenario SyntheticScenario::parse(std::string_view json_text) {
    SyntheticScenario sc;
    try {
        json doc = json::parse(json_text);
        if (!doc.is_object()) throw ScenarioInvalid("scenario must be a JSON object");
        for (const auto& [key, value] : doc.items()) {
            if (key == "seed") sc.seed = value.get<std::uint64_t>();
            else if (key == "n_domains") sc.n_domains = value.get<int>();
            else if (key == "n_correct_pairs") sc.n_correct_pairs = value.get<int>();
            else if (key == "n_cdn_decoys") sc.n_cdn_decoys = value.get<int>();
            else if (key == "n_nonhome_decoys") sc.n_nonhome_decoys = value.get<int>();
            else if (key == "n_spoof_decoys") sc.n_spoof_decoys = value.get<int>();
            else if (key == "duration_secs") sc.duration_secs = value.get<double>();
            else throw ScenarioInvalid("unknown key " + key);
        }
    } catch (const json::exception& e) {
        throw ScenarioInvalid(std::string("scenario: ") + e.what());
    }
    sc.validate();
    return sc;
}

SyntheticScenario SyntheticScenario::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ScenarioInvalid("cannot open " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse(text.str());
}

void SyntheticScenario::validate() const {
    constexpr int kMaxPerClass = 62500;  // one /16 of 127/8 per class
    if (n_domains < 1 || n_domains > 10000) throw ScenarioInvalid("n_domains out of range");
    for (int n : {n_correct_pairs, n_cdn_decoys, n_nonhome_decoys, n_spoof_decoys}) {
        if (n < 0 || n > kMaxPerClass) throw ScenarioInvalid("pair count out of range");
    }
    if (!(duration_secs >= 60.0) || duration_secs > kSecondsPerDay) throw ScenarioInvalid("duration_secs out of range");
}

std::string label_to_json_line(const LabeledPair& label) {
    json j{{"ip", label.key.ip.to_string()}, {"domain", label.key.domain.str()}, {"correct", label.correct}};
    return j.dump();
}

std::optional<LabeledPair> parse_label_line(std::string_view line) {
    try {
        json j = json::parse(line);
        auto ip = IpAddr::try_parse(j.at("ip").get<std::string>());
        auto domain = try_canonicalize_domain(j.at("domain").get<std::string>());
        if (!ip || !domain || !j.at("correct").is_boolean()) return std::nullopt;
        return LabeledPair{{*ip, *domain}, j.at("correct").get<bool>()};
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

void write_labels_jsonl(std::ostream& out, std::span<const LabeledPair> labels) {
    for (const auto& l : labels) out << label_to_json_line(l) << '\n';
}

// ------------------------------------------------------------- generator

namespace {

struct Rand {
    std::mt19937_64 eng;
    explicit Rand(std::uint64_t seed) : eng(seed) {}
    std::uint64_t below(std::uint64_t n) { return eng() % n; }
    double unit() { return static_cast<double>(eng() >> 11) * (1.0 / 9007199254740992.0); }
    bool chance(double p) { return unit() < p; }
    template <class T>
    const T& pick(const std::vector<T>& v) { return v[below(v.size())]; }
};

const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> words = [] {
        static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                       "br", "tr", "st", "pl", "gr", "sh"};
        static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
        static const char* codas[] = {"", "", "n", "r", "s", "l", "m", "x"};
        Rand rng(0x5eed);
        std::set<std::string> seen;
        std::vector<std::string> out;
        while (out.size() < 6000) {
            int syllables = 2 + static_cast<int>(rng.below(2));
            std::string w;
            for (int i = 0; i < syllables; ++i) {
                w += onsets[rng.below(std::size(onsets))];
                w += vowels[rng.below(std::size(vowels))];
            }
            w += codas[rng.below(std::size(codas))];
            if (is_stopword(w) || !seen.insert(w).second) continue;
            out.push_back(std::move(w));
        }
        return out;
    }();
    return words;
}

struct Page {
    std::vector<std::string> words;  // first two form the title
};

Page random_page(Rand& rng, std::size_t n_words = 300) {
    const auto& vocab = vocabulary();
    Page p;
    for (std::size_t i = 0; i < n_words; ++i) p.words.push_back(rng.pick(vocab));
    return p;
}

std::string render(const Page& page, int variant = 0) {
    std::string out = "<!DOCTYPE html>\n<html><head><title>";
    out += page.words[0] + " " + page.words[1];
    out += "</title>";
    if (variant) out += "<!-- build " + std::to_string(variant) + " -->";
    out += "<style>body{margin:0}</style></head>\n<body class=\"v" + std::to_string(variant) + "\">\n<p>";
    for (std::size_t i = 2; i < page.words.size(); ++i) {
        out += page.words[i];
        out += (i % 20 == 1) ? "</p>\n<p>" : " ";
    }
    out += "</p>\n</body></html>\n";
    return out;
}

// A rendering of a random edit of `base` whose fingerprint lies within
// [lo, hi] bits of `ref`.
std::string perturbed(Rand& rng, const Page& base, Fingerprint ref, int lo, int hi) {
    const auto& vocab = vocabulary();
    int variant = 1 + static_cast<int>(rng.below(1000));
    if (lo == 0 && hamming(fingerprint_document(render(base, variant)), ref) <= hi) return render(base, variant);
    for (int restart = 0; restart < 2000; ++restart) {
        Page p = base;
        for (int step = 0; step < 40; ++step) {
            p.words[2 + rng.below(p.words.size() - 2)] = rng.pick(vocab);
            std::string body = render(p, variant);
            int d = hamming(fingerprint_document(body), ref);
            if (d >= lo && d <= hi) return body;
            if (d > hi) break;
        }
    }
    throw Error("cannot reach distance range");
}

IpAddr address(int cls, int j) {
    return IpAddr::v4({127, static_cast<std::uint8_t>(cls), static_cast<std::uint8_t>(j / 250),
                       static_cast<std::uint8_t>(j % 250 + 1)});
}

DomainName dn(const std::string& s) { return canonicalize_domain(s); }

struct Emitter {
    std::vector<TrafficEvent> events;
    IpAddr resolver = IpAddr::v4({127, 0, 0, 53});

    void dns(double ts, const DomainName& q, std::vector<DnsRecord> answers) {
        events.push_back({ts, DnsObservation{resolver, q, std::move(answers)}});
    }
    void dns_a(double ts, const DomainName& q, const IpAddr& ip) { dns(ts, q, {DnsRecord{q, RType::A, ip}}); }
    void dns_cname(double ts, const DomainName& q, const DomainName& alias, const IpAddr& ip) {
        dns(ts, q, {DnsRecord{q, RType::CNAME, alias}, DnsRecord{alias, RType::A, ip}});
    }
    void ssl(double ts, const IpAddr& ip, const DomainName& host) { events.push_back({ts, SslObservation{ip, host}}); }
    void http(double ts, const IpAddr& ip, const DomainName& host, std::string path, int status, std::string body) {
        events.push_back({ts, HttpObservation{ip, host, std::move(path), status, std::move(body)}});
    }
};

bool has_cdn_feature(const std::string& name) {
    DomainName d = dn(name);
    return cdn_filter(std::span<const DomainName>(&d, 1));
}

enum class CorrectKind { full, http_only, weak_http, dns_only };

}  // namespace

SyntheticCorpus gen_synthetic(const SyntheticScenario& sc) {
    sc.validate();
    Rand rng(sc.seed);
    const auto& vocab = vocabulary();
    const double base_ts = 1700010000.0;  // 01:00 UTC, so a 2 h run stays in one day
    auto session_start = [&] {
        double t = rng.unit() * std::max(1.0, sc.duration_secs - 30.0);
        return base_ts + std::floor(t * 1000.0) / 1000.0;
    };

    // Watched domains with their reference pages.
    std::vector<DomainName> domains;
    std::vector<Page> pages;
    std::vector<Fingerprint> refs;
    std::set<std::string> used;
    static const std::vector<std::string> tlds = {"com", "net", "org", "io"};
    while (static_cast<int>(domains.size()) < sc.n_domains) {
        std::string name = rng.pick(vocab) + rng.pick(vocab) + "." + rng.pick(tlds);
        if (name.size() > 40 || has_cdn_feature(name) || !used.insert(name).second) continue;
        domains.push_back(dn(name));
        pages.push_back(random_page(rng));
        refs.push_back(fingerprint_document(render(pages.back())));
    }

    SyntheticCorpus out;
    for (std::size_t i = 0; i < domains.size(); ++i) out.homepages.emplace_back(domains[i], render(pages[i]));
    Emitter em;
    auto sub = [&](int di, std::string_view label) {
        return label.empty() ? domains[di] : dn(std::string(label) + "." + domains[di].str());
    };

    // Correct pairs.
    std::vector<CorrectKind> kinds;
    {
        int n = sc.n_correct_pairs;
        int n_http = static_cast<int>(std::lround(n * 0.17));
        int n_weak = static_cast<int>(std::lround(n * 0.04));
        int n_dns = static_cast<int>(std::lround(n * 0.02));
        int n_full = std::max(0, n - n_http - n_weak - n_dns);
        kinds.insert(kinds.end(), n_full, CorrectKind::full);
        kinds.insert(kinds.end(), n_http, CorrectKind::http_only);
        kinds.insert(kinds.end(), n_weak, CorrectKind::weak_http);
        kinds.insert(kinds.end(), n_dns, CorrectKind::dns_only);
        kinds.resize(n, CorrectKind::full);
        std::shuffle(kinds.begin(), kinds.end(), rng.eng);
    }
    static const std::vector<std::string> correct_labels = {"www", "", "m", "www"};
    for (int i = 0; i < sc.n_correct_pairs; ++i) {
        int di = i % sc.n_domains;
        DomainName host = sub(di, correct_labels[(i / sc.n_domains) % correct_labels.size()]);
        IpAddr ip = address(1, i);
        out.labels.push_back({{ip, host}, true});
        out.served[ip] = out.homepages[di].second;
        std::string path = rng.chance(0.8) ? "/" : "/index.html";
        switch (kinds[i]) {
        case CorrectKind::full: {
            int sessions = 1 + static_cast<int>(rng.below(3));
            static const int dist_pick[] = {0, 0, 1, 1, 2};
            for (int s = 0; s < sessions; ++s) {
                double t = session_start();
                if (rng.chance(0.3)) {
                    em.dns_cname(t, host, dn("origin." + domains[di].str()), ip);
                } else {
                    em.dns_a(t, host, ip);
                }
                em.ssl(t + 0.2, ip, host);
                int dist = dist_pick[rng.below(5)];
                em.http(t + 0.5, ip, host, path, 200, perturbed(rng, pages[di], refs[di], dist, dist));
            }
            break;
        }
        case CorrectKind::http_only: {
            int sessions = 1 + static_cast<int>(rng.below(2));
            for (int s = 0; s < sessions; ++s) {
                em.http(session_start(), ip, host, path, 200, perturbed(rng, pages[di], refs[di], 3, 3));
            }
            break;
        }
        case CorrectKind::weak_http: {
            double t = session_start();
            em.dns_a(t, host, ip);
            em.ssl(t + 0.2, ip, host);
            em.http(t + 0.5, ip, host, path, 200, perturbed(rng, pages[di], refs[di], 4 + int(rng.below(5)), 8));
            break;
        }
        case CorrectKind::dns_only:
            em.dns_a(session_start(), host, ip);
            break;
        }
    }

    // CDN decoys: CNAME chains into CDN names, then traffic on the edge address.
    static const std::vector<std::string> cdn_zones = {
        "akamai.net",      "akadns.net",     "edgesuite.net",        "edgekey.net",
        "cloudfront.net",  "amazonaws.com",  "ccgslb.chinacache.net", "cdn.cloudflare.net",
        "edgecast.net",    "global.fastly.net", "cdntip.com",         "dnsv1.com",
        "passvpn.net",     "a-msedge1.net",  "edge.wscloud.net",     "incap.impv.net"};
    static const std::vector<std::string> cdn_labels = {"www", "static", "img", ""};
    for (int i = 0; i < sc.n_cdn_decoys; ++i) {
        int di = static_cast<int>(rng.below(sc.n_domains));
        DomainName host = sub(di, cdn_labels[i % cdn_labels.size()]);
        IpAddr ip = address(2, i);
        out.labels.push_back({{ip, host}, false});
        out.served[ip] = out.homepages[di].second;
        std::string zone = cdn_zones[i % cdn_zones.size()];
        std::string first(domains[di].labels()[0]);
        DomainName alias = dn("e" + std::to_string(1000 + i) + "-" + first + "." + zone);
        int sessions = 1 + static_cast<int>(rng.below(2));
        for (int s = 0; s < sessions; ++s) {
            double t = session_start();
            em.dns_cname(t, host, alias, ip);
            em.ssl(t + 0.2, ip, host);
            em.http(t + 0.5, ip, host, "/", 200, out.homepages[di].second);
        }
    }

    // Non-homepage decoys: resources and deep pages.
    static const std::vector<std::string> asset_labels = {"static", "img", "www", "dl"};
    for (int i = 0; i < sc.n_nonhome_decoys; ++i) {
        int di = static_cast<int>(rng.below(sc.n_domains));
        DomainName host = sub(di, asset_labels[i % asset_labels.size()]);
        IpAddr ip = address(3, i);
        out.labels.push_back({{ip, host}, false});
        double t = session_start();
        if (rng.chance(0.5)) em.dns_a(t - 0.1, host, ip);
        if (rng.chance(0.6)) em.ssl(t, ip, host);
        int requests = 1 + static_cast<int>(rng.below(3));
        for (int r = 0; r < requests; ++r) {
            std::string path;
            switch (rng.below(7)) {
            case 0: path = "/download/setup" + std::to_string(rng.below(100)) + ".exe"; break;
            case 1: path = "/img/banner" + std::to_string(rng.below(100)) + ".png"; break;
            case 2: path = "/static/app." + std::to_string(rng.below(1000)) + ".js"; break;
            case 3: path = "/news/n" + std::to_string(10000000 + rng.below(89999999)) + ".html"; break;
            case 4: path = "/go/redirect?to=" + rng.pick(vocab); break;
            case 5: path = "/list?a=" + std::to_string(rng.below(9)) + "&b=2&c=3"; break;
            default:
                path = "/archive/" + rng.pick(vocab) + "/" + rng.pick(vocab) + "/" + rng.pick(vocab) + "/" +
                       rng.pick(vocab) + "/" + rng.pick(vocab) + "/" + rng.pick(vocab) + "/item";
                while (host.str().size() + path.size() <= 50) path += "/" + rng.pick(vocab);
                break;
            }
            em.http(t + 0.3 + r * 0.4, ip, host, path, 200, render(random_page(rng, 120)));
        }
    }

    // Spoofed answers: wrong address with an unrelated page or a near clone.
    for (int i = 0; i < sc.n_spoof_decoys; ++i) {
        int di = static_cast<int>(rng.below(sc.n_domains));
        DomainName host = sub(di, rng.chance(0.5) ? "www" : "");
        IpAddr ip = address(4, i);
        out.labels.push_back({{ip, host}, false});
        std::string body;
        if (i % 4 == 0) {
            body = perturbed(rng, pages[di], refs[di], 5 + int(rng.below(8)), 12);
        } else {
            do body = render(random_page(rng)); while (hamming(fingerprint_document(body), refs[di]) <= 16);
        }
        out.served[ip] = body;
        double t = session_start();
        em.dns_a(t, host, ip);
        em.ssl(t + 0.2, ip, host);
        em.http(t + 0.5, ip, host, "/", 200, body);
    }

    std::stable_sort(em.events.begin(), em.events.end(),
                     [](const TrafficEvent& a, const TrafficEvent& b) { return a.ts < b.ts; });
    out.events = std::move(em.events);
    return out;
}

// ------------------------------------------------------------- metrics

Metrics evaluate_run(std::span<const PublishedEntry> published, std::span<const LabeledPair> labels, int simhash_n) {
    std::unordered_map<CandidateKey, bool, CandidateKeyHash> truth;
    for (const auto& l : labels) truth[l.key] = l.correct;
    std::unordered_set<CandidateKey, CandidateKeyHash> judged;
    Metrics m;
    m.simhash_n = simhash_n;
    for (const auto& e : published) {
        auto it = truth.find(e.key);
        if (it == truth.end()) throw UnlabeledPair(e.key.ip.to_string() + " " + e.key.domain.str());
        if (!judged.insert(e.key).second) continue;
        if (it->second) ++m.cm.n_cc;
        else ++m.cm.n_ic;
    }
    for (const auto& [key, correct] : truth) {
        if (judged.contains(key)) continue;
        if (correct) ++m.cm.n_ci;
        else ++m.cm.n_ii;
    }
    auto guarded = [&](double (*f)(const ConfusionMatrix&)) -> std::optional<double> {
        try {
            return f(m.cm);
        } catch (const UndefinedMetric&) {
            return std::nullopt;
        }
    };
    m.precision = guarded(&precision);
    m.recall = guarded(&recall);
    m.accuracy = guarded(&accuracy);
    return m;
}

namespace {

json metrics_json(const Metrics& m) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return json{{"n_cc", m.cm.n_cc},          {"n_ci", m.cm.n_ci},     {"n_ic", m.cm.n_ic},
                {"n_ii", m.cm.n_ii},          {"precision", opt(m.precision)}, {"recall", opt(m.recall)},
                {"accuracy", opt(m.accuracy)}, {"simhash_n", m.simhash_n}};
}

}  // namespace

std::string metrics_to_json(const Metrics& m) { return metrics_json(m).dump(); }

std::string sweep_to_json(const SweepResult& sweep) {
    json rows = json::array();
    for (const auto& r : sweep.rows) rows.push_back(metrics_json(r));
    return json{{"rows", rows}, {"balance_n", sweep.balance_n}}.dump();
}

// ------------------------------------------------------------- fixture

struct FixtureServer::Impl {
    httplib::Server server;
    std::thread thread;
    std::unordered_map<IpAddr, std::string, IpAddrHash> pages;
    std::atomic<std::size_t> requests{0};
};

FixtureServer::FixtureServer(std::unordered_map<IpAddr, std::string, IpAddrHash> pages)
    : impl_(std::make_unique<Impl>()) {
    impl_->pages = std::move(pages);
    Impl* impl = impl_.get();
    impl->server.Get("/", [impl](const httplib::Request& req, httplib::Response& res) {
        ++impl->requests;
        auto local = IpAddr::try_parse(req.local_addr);
        auto it = local ? impl->pages.find(*local) : impl->pages.end();
        if (it == impl->pages.end()) {
            res.status = 404;
            res.set_content("not found", "text/plain");
            return;
        }
        res.set_content(it->second, "text/html");
    });
    port_ = impl->server.bind_to_any_port("0.0.0.0");
    if (port_ <= 0) throw Error("fixture server: bind failed");
    impl->thread = std::thread([impl] { impl->server.listen_after_bind(); });
    impl->server.wait_until_ready();
}

FixtureServer::~FixtureServer() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::size_t FixtureServer::requests() const noexcept { return impl_->requests.load(); }

// ------------------------------------------------------------- runs

RunResult run_scenario(const SyntheticCorpus& corpus, PipelineConfig cfg, const FixtureServer* fixture) {
    double now = corpus.events.empty() ? 1700010000.0 : corpus.events.front().ts;
    if (fixture) {
        cfg.probe_http_port = fixture->port();
        if (cfg.probe_timeout_secs > 2.0) cfg.probe_timeout_secs = 2.0;
    }
    Store store(cfg, [&now] { return now; });
    store.set_auto_flush(false);
    for (const auto& [domain, page] : corpus.homepages) {
        store.add_user_string(make_specific_string(SpecKind::domain, domain.str(), SpecSource::user));
        store.put_pending_reference({domain, fingerprint_document(page), kFingerprintVersion, now});
        store.confirm_reference(domain);
    }

    Pipeline pipeline(store);
    for (const auto& ev : corpus.events) {
        now = ev.ts;
        pipeline.ingest(ev);
    }
    pipeline.finish();
    now += 1.0;

    RunResult result;
    if (fixture) {
        HttpFetcher fetcher(cfg.probe_http_port, cfg.probe_timeout_secs);
        ProbeScheduler scheduler(store, fetcher);
        result.probed = scheduler.run_once().tasks;
    }
    result.candidates = store.candidate_count();
    result.published = store.publish_list(now);
    result.metrics = evaluate_run(result.published, corpus.labels, cfg.simhash_threshold_n);
    return result;
}

SweepResult threshold_sweep(const SyntheticCorpus& corpus, const PipelineConfig& cfg, std::span<const int> n_values,
                            const FixtureServer* fixture) {
    SweepResult sweep;
    double best = -1.0;
    for (int n : n_values) {
        if (n < 0 || n > 64) throw ConfigInvalid("N in 0..64");
        PipelineConfig c = cfg;
        c.simhash_threshold_n = n;
        c.sim_reject_dist = std::max(cfg.sim_reject_dist, n);
        Metrics m = run_scenario(corpus, c, fixture).metrics;
        double balance = std::min(m.precision.value_or(0.0), m.recall.value_or(0.0));
        if (balance > best) {
            best = balance;
            sweep.balance_n = n;
        }
        sweep.rows.push_back(m);
    }
    return sweep;
}

}  // namespace bindwatch
