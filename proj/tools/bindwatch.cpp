// bindwatch command line.

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "bindwatch/active_probe.hpp"
#include "bindwatch/evaluation.hpp"
#include "bindwatch/feedback_store.hpp"
#include "bindwatch/fingerprint.hpp"
#include "bindwatch/match_filter.hpp"
#include "bindwatch/pipeline.hpp"
#include "bindwatch/service_api.hpp"
#include "bindwatch/wire.hpp"

using namespace bindwatch;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kParse = 2, kStore = 3 };

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

struct Common {
    std::string config;
    std::string store = ".bindwatch";
};

PipelineConfig config_of(const Common& c) { return c.config.empty() ? PipelineConfig{} : load_config(c.config); }

std::unique_ptr<Store> open_store(const Common& c) { return Store::open(c.store, config_of(c)); }

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON config file");
    cmd->add_option("--store", c.store, "store directory");
}

std::vector<int> parse_sweep(const std::string& text) {
    std::vector<int> out;
    auto dots = text.find("..");
    try {
        if (dots != std::string::npos) {
            int lo = std::stoi(text.substr(0, dots));
            int hi = std::stoi(text.substr(dots + 2));
            for (int n = lo; n <= hi; ++n) out.push_back(n);
        } else {
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
        }
    } catch (const std::exception&) {
        throw ConfigInvalid("sweep must be A..B or a comma list");
    }
    if (out.empty()) throw ConfigInvalid("empty sweep");
    for (int n : out) {
        if (n < 0 || n > 64) throw ConfigInvalid("sweep values in 0..64");
    }
    return out;
}

json report_json(const IngestReport& r) {
    json j{{"events_ingested", r.counters.events_ingested},
           {"hits", r.counters.hits},
           {"filtered_cdn", r.counters.filtered_cdn},
           {"filtered_url", r.counters.filtered_url},
           {"windows_closed", r.windows_closed},
           {"auto_entries", r.auto_entries},
           {"skipped_lines", r.skipped_lines}};
    if (r.capture) {
        const auto& c = *r.capture;
        j["capture"] = {{"records", c.records},
                        {"events", c.events},
                        {"undecodable", c.undecodable},
                        {"dns_malformed", c.dns_malformed},
                        {"http_unparseable", c.http_unparseable},
                        {"tls_unparseable", c.tls_unparseable},
                        {"tls_no_sni", c.tls_no_sni},
                        {"other_payloads", c.other_payloads}};
    }
    if (r.capture_error) j["capture_error"] = *r.capture_error;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Detects and publishes correct (IP, domain) bindings from passive traffic"};
    app.require_subcommand(1);

    Common common;

    // ingest
    auto* ingest = app.add_subcommand("ingest", "ingest a capture or normalized events");
    add_common(ingest, common);
    std::string pcap_path, events_path, filters_path;
    auto* pcap_opt = ingest->add_option("--pcap", pcap_path, "pcap file");
    auto* events_opt = ingest->add_option("--events", events_path, "JSONL events file");
    pcap_opt->excludes(events_opt);
    ingest->add_option("--filters", filters_path, "filter features JSON");

    // watch
    auto* watch = app.add_subcommand("watch", "manage the watchlist");
    watch->require_subcommand(1);
    std::string w_domain, w_ip, w_regex;
    std::vector<CLI::App*> watch_cmds;
    for (const char* name : {"add", "rm"}) {
        auto* sub = watch->add_subcommand(name);
        add_common(sub, common);
        auto* d = sub->add_option("--domain", w_domain);
        auto* i = sub->add_option("--ip", w_ip);
        auto* r = sub->add_option("--regex", w_regex);
        d->excludes(i)->excludes(r);
        i->excludes(r);
        watch_cmds.push_back(sub);
    }
    auto* watch_list = watch->add_subcommand("list");
    add_common(watch_list, common);

    // probe
    auto* probe = app.add_subcommand("probe", "probe Recommended pairs");
    add_common(probe, common);
    bool once = false, daemon = false;
    std::string candidates_path;
    double interval = 60.0;
    auto* once_opt = probe->add_flag("--once", once);
    auto* daemon_opt = probe->add_flag("--daemon", daemon);
    once_opt->excludes(daemon_opt);
    probe->add_option("--candidates", candidates_path, "JSONL external suggestions");
    probe->add_option("--interval", interval, "daemon pass interval (s)")->check(CLI::PositiveNumber);

    // publish
    auto* publish = app.add_subcommand("publish", "write the published list");
    add_common(publish, common);
    std::string publish_out;
    publish->add_option("--out", publish_out)->required();

    // eval
    auto* eval = app.add_subcommand("eval", "planted-truth evaluation");
    std::string scenario_path, eval_out, sweep_text, eval_config, labels_out, events_out;
    eval->add_option("--scenario", scenario_path)->required();
    eval->add_option("--out", eval_out)->required();
    eval->add_option("--sweep", sweep_text, "N values, e.g. 0..8");
    eval->add_option("--config", eval_config);
    eval->add_option("--labels-out", labels_out);
    eval->add_option("--events-out", events_out);

    // serve
    auto* serve = app.add_subcommand("serve", "run the JSON service");
    add_common(serve, common);
    std::string listen = "127.0.0.1:8080";
    serve->add_option("--listen", listen);

    // reference
    auto* reference = app.add_subcommand("reference", "manage homepage references");
    reference->require_subcommand(1);
    auto* ref_add = reference->add_subcommand("add");
    auto* ref_confirm = reference->add_subcommand("confirm");
    std::string ref_domain, ref_file;
    bool ref_crawl = false;
    for (auto* sub : {ref_add, ref_confirm}) {
        add_common(sub, common);
        sub->add_option("--domain", ref_domain)->required();
    }
    auto* file_opt = ref_add->add_option("--file", ref_file, "homepage HTML");
    auto* crawl_opt = ref_add->add_flag("--crawl", ref_crawl, "fetch via the configured resolver");
    file_opt->excludes(crawl_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*ingest) {
            if (pcap_path.empty() == events_path.empty()) {
                std::cerr << "ingest: exactly one of --pcap or --events\n";
                return kUsage;
            }
            auto features = filters_path.empty() ? FilterFeatures::defaults() : FilterFeatures::load(filters_path);
            auto store = open_store(common);
            IngestReport report;
            if (!pcap_path.empty()) {
                report = ingest_pcap(*store, pcap_path, features);
            } else {
                std::ifstream in(events_path, std::ios::binary);
                if (!in) throw ConfigInvalid("cannot open " + events_path);
                report = ingest_jsonl(*store, in, features);
            }
            store->checkpoint();
            std::cout << report_json(report).dump() << '\n';
            return kOk;
        }

        for (auto* sub : watch_cmds) {
            if (!*sub) continue;
            SpecKind kind;
            std::string value;
            if (!w_domain.empty()) kind = SpecKind::domain, value = w_domain;
            else if (!w_ip.empty()) kind = SpecKind::ip, value = w_ip;
            else if (!w_regex.empty()) kind = SpecKind::regex, value = w_regex;
            else {
                std::cerr << "watch: one of --domain, --ip, --regex\n";
                return kUsage;
            }
            auto spec = make_specific_string(kind, value, SpecSource::user);
            auto store = open_store(common);
            if (sub->get_name() == "add") {
                auto result = store->add_user_string(spec);
                store->flush();
                std::cout << (result.created ? "added" : "exists") << '\n';
            } else {
                bool removed = store->remove_watch(spec);
                store->flush();
                std::cout << (removed ? "removed" : "absent") << '\n';
            }
            return kOk;
        }
        if (*watch_list) {
            auto store = open_store(common);
            for (const auto& e : store->watchlist()) {
                std::cout << to_string(e.spec.kind) << '\t' << e.spec.value << '\t' << to_string(e.spec.source) << '\n';
            }
            return kOk;
        }

        if (*probe) {
            if (!once && !daemon) {
                std::cerr << "probe: --once or --daemon\n";
                return kUsage;
            }
            auto store = open_store(common);
            const auto& cfg = store->config();
            HttpFetcher fetcher(cfg.probe_http_port, cfg.probe_timeout_secs);
            ProbeScheduler scheduler(*store, fetcher);
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            do {
                ProbeRunStats stats = scheduler.run_once();
                if (!candidates_path.empty()) {
                    std::vector<ProbeTask> tasks;
                    for (const auto& s : JsonlCandidateProvider(candidates_path).suggestions()) {
                        tasks.push_back({{s.ip, s.domain}, ProbeReason::recommended, store->now(), 0});
                    }
                    auto extra = scheduler.probe(std::move(tasks));
                    stats.tasks += extra.tasks;
                    stats.skipped_allowlist += extra.skipped_allowlist;
                    stats.connected += extra.connected;
                    stats.refused += extra.refused;
                    stats.timeouts += extra.timeouts;
                    stats.correct += extra.correct;
                    stats.incorrect += extra.incorrect;
                    stats.uncertain += extra.uncertain;
                    stats.peak_inflight = std::max(stats.peak_inflight, extra.peak_inflight);
                }
                store->checkpoint();
                std::cout << json{{"tasks", stats.tasks},         {"skipped_allowlist", stats.skipped_allowlist},
                                  {"connected", stats.connected}, {"refused", stats.refused},
                                  {"timeouts", stats.timeouts},   {"correct", stats.correct},
                                  {"incorrect", stats.incorrect}, {"uncertain", stats.uncertain}}
                                 .dump()
                          << std::endl;
                for (double waited = 0; daemon && !g_stop && waited < interval; waited += 0.2) {
                    std::this_thread::sleep_for(std::chrono::milliseconds(200));
                }
            } while (daemon && !g_stop);
            return kOk;
        }

        if (*publish) {
            auto store = open_store(common);
            auto list = store->publish_list();
            std::ofstream out(publish_out, std::ios::binary | std::ios::trunc);
            if (!out) throw StoreError("cannot write " + publish_out);
            for (const auto& e : list) out << published_to_json_line(e) << '\n';
            out.close();
            if (!out) throw StoreError("cannot write " + publish_out);
            std::cout << list.size() << " published\n";
            return kOk;
        }

        if (*eval) {
            auto scenario = SyntheticScenario::load(scenario_path);
            PipelineConfig cfg = eval_config.empty() ? PipelineConfig{} : load_config(eval_config);
            auto corpus = gen_synthetic(scenario);
            if (!labels_out.empty()) {
                std::ofstream out(labels_out, std::ios::binary | std::ios::trunc);
                write_labels_jsonl(out, corpus.labels);
            }
            if (!events_out.empty()) {
                std::ofstream out(events_out, std::ios::binary | std::ios::trunc);
                for (const auto& ev : corpus.events) write_events_jsonl(out, ev);
            }
            FixtureServer fixture(corpus.served);
            RunResult run = run_scenario(corpus, cfg, &fixture);
            json report = json::parse(metrics_to_json(run.metrics));
            if (!sweep_text.empty()) {
                auto ns = parse_sweep(sweep_text);
                auto sweep = threshold_sweep(corpus, cfg, ns, &fixture);
                report["sweep"] = json::parse(sweep_to_json(sweep));
            }
            std::ofstream out(eval_out, std::ios::binary | std::ios::trunc);
            if (!out) throw StoreError("cannot write " + eval_out);
            out << report.dump(2) << '\n';
            std::cout << metrics_to_json(run.metrics) << '\n';
            return kOk;
        }

        if (*serve) {
            auto [host, port] = parse_listen_addr(listen);
            auto store = open_store(common);
            store->set_auto_flush(true);
            ApiServer server(*store, host, port);
            std::cerr << "listening on " << host << ':' << server.port() << std::endl;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
            server.stop();
            store->checkpoint();
            return kOk;
        }

        if (*ref_add) {
            auto domain = canonicalize_domain(ref_domain);
            auto store = open_store(common);
            ReferenceFingerprint ref;
            if (!ref_file.empty()) {
                ref = reference_from_file(*store, domain, ref_file);
            } else if (ref_crawl) {
                const auto& cfg = store->config();
                HttpFetcher fetcher(cfg.probe_http_port, cfg.probe_timeout_secs);
                ref = crawl_reference(*store, domain, ResolverEndpoint::parse(cfg.resolver), fetcher);
            } else {
                std::cerr << "reference add: --file or --crawl\n";
                return kUsage;
            }
            store->flush();
            std::cout << "pending " << domain.str() << ' ' << ref.fp.to_hex() << '\n';
            return kOk;
        }
        if (*ref_confirm) {
            auto domain = canonicalize_domain(ref_domain);
            auto store = open_store(common);
            store->confirm_reference(domain);
            store->flush();
            std::cout << "confirmed " << domain.str() << '\n';
            return kOk;
        }
    } catch (const ConfigInvalid& e) {
        std::cerr << "error: config: " << e.what() << '\n';
        return kParse;
    } catch (const InvalidSpec& e) {
        std::cerr << "error: watch string: " << e.what() << '\n';
        return kParse;
    } catch (const InvalidDomain& e) {
        std::cerr << "error: domain: " << e.what() << '\n';
        return kParse;
    } catch (const InvalidAddress& e) {
        std::cerr << "error: address: " << e.what() << '\n';
        return kParse;
    } catch (const PcapError& e) {
        std::cerr << "error: capture: " << e.what() << '\n';
        return kParse;
    } catch (const ScenarioInvalid& e) {
        std::cerr << "error: scenario: " << e.what() << '\n';
        return kParse;
    } catch (const FetchFailed& e) {
        std::cerr << "error: fetch: " << e.what() << '\n';
        return kParse;
    } catch (const NotFound& e) {
        std::cerr << "error: not found: " << e.what() << '\n';
        return kStore;
    } catch (const SchemaMismatch& e) {
        std::cerr << "error: store schema: " << e.what() << '\n';
        return kStore;
    } catch (const CorruptSnapshot& e) {
        std::cerr << "error: store snapshot: " << e.what() << '\n';
        return kStore;
    } catch (const StoreError& e) {
        std::cerr << "error: store: " << e.what() << '\n';
        return kStore;
    } catch (const BindFailure& e) {
        std::cerr << "error: listen: " << e.what() << '\n';
        return kStore;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kStore;
    }
    return kUsage;
}
