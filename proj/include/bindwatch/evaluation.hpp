#pragma once

// Metrics, planted-truth corpus generation, end-to-end runs and the
// SimHash threshold sweep.

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bindwatch/feedback_store.hpp"
#include "bindwatch/model.hpp"

namespace bindwatch {

class UndefinedMetric : public Error {
public:
    using Error::Error;
};

class UnlabeledPair : public Error {
public:
    using Error::Error;
};

class ScenarioInvalid : public Error {
public:
    using Error::Error;
};

struct ConfusionMatrix {
    std::uint64_t n_cc = 0;  // correct judged correct
    std::uint64_t n_ci = 0;  // correct judged incorrect
    std::uint64_t n_ic = 0;  // incorrect judged correct
    std::uint64_t n_ii = 0;  // incorrect judged incorrect

    std::uint64_t total() const noexcept { return n_cc + n_ci + n_ic + n_ii; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Each throws UndefinedMetric on a zero denominator.
double recall(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);
double precision(const ConfusionMatrix& cm);

struct SyntheticScenario {
    std::uint64_t seed = 1;
    int n_domains = 50;
    int n_correct_pairs = 200;
    int n_cdn_decoys = 300;
    int n_nonhome_decoys = 300;
    int n_spoof_decoys = 400;
    double duration_secs = 7200.0;

    // Missing keys keep the desk defaults; unknown keys throw ScenarioInvalid.
    static SyntheticScenario parse(std::string_view json_text);
    static SyntheticScenario load(const std::string& path);
    void validate() const;
};

struct LabeledPair {
    CandidateKey key;
    bool correct = false;
};

std::string label_to_json_line(const LabeledPair& label);
std::optional<LabeledPair> parse_label_line(std::string_view line);

struct SyntheticCorpus {
    std::vector<TrafficEvent> events;  // time ordered
    std::vector<LabeledPair> labels;   // one per emitted pair
    std::vector<std::pair<DomainName, std::string>> homepages;  // watched domain -> reference page
    std::unordered_map<IpAddr, std::string, IpAddrHash> served;  // what each address answers on "/"
};

SyntheticCorpus gen_synthetic(const SyntheticScenario& scenario);

void write_labels_jsonl(std::ostream& out, std::span<const LabeledPair> labels);

struct Metrics {
    ConfusionMatrix cm;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> accuracy;
    int simhash_n = 0;
};

// Throws UnlabeledPair when a published pair has no label.
Metrics evaluate_run(std::span<const PublishedEntry> published, std::span<const LabeledPair> labels,
                     int simhash_n = 0);

std::string metrics_to_json(const Metrics& m);

// Loopback HTTP server answering "/" with the page registered for the local
// address the request arrived on, 404 otherwise.
class FixtureServer {
public:
    explicit FixtureServer(std::unordered_map<IpAddr, std::string, IpAddrHash> pages);
    ~FixtureServer();
    FixtureServer(const FixtureServer&) = delete;
    FixtureServer& operator=(const FixtureServer&) = delete;

    int port() const noexcept { return port_; }
    std::size_t requests() const noexcept;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

struct RunResult {
    Metrics metrics;
    std::size_t probed = 0;
    std::size_t candidates = 0;
    std::vector<PublishedEntry> published;
};

// Fresh in-memory store: watch every domain, install references, ingest the
// events, probe Recommended pairs against `fixture` (when given), publish.
RunResult run_scenario(const SyntheticCorpus& corpus, PipelineConfig cfg, const FixtureServer* fixture);

struct SweepResult {
    std::vector<Metrics> rows;
    int balance_n = 0;  // N maximising min(precision, recall)
};

SweepResult threshold_sweep(const SyntheticCorpus& corpus, const PipelineConfig& cfg, std::span<const int> n_values,
                            const FixtureServer* fixture);

std::string sweep_to_json(const SweepResult& sweep);

}  // namespace bindwatch
