#pragma once

// SimHash fingerprints of homepage documents.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bindwatch/model.hpp"

namespace bindwatch {

// Bumped whenever the tokenizer or stopword list changes; stored references
// with another version are regenerated, never compared.
inline constexpr int kFingerprintVersion = 1;
inline constexpr int kMaxTokenWeight = 15;

struct Fingerprint {
    std::uint64_t bits = 0;

    std::string to_hex() const;
    static std::optional<Fingerprint> from_hex(std::string_view hex) noexcept;

    friend bool operator==(Fingerprint, Fingerprint) = default;
};

struct WeightedToken {
    std::string token;
    int weight = 0;

    friend bool operator==(const WeightedToken&, const WeightedToken&) = default;
};

// Strips script/style content, comments, tags and entities, lowercases,
// splits on non-alphanumerics, drops short tokens and stopwords. Result is
// sorted by token.
std::vector<WeightedToken> tokenize(std::string_view document);

std::uint64_t fnv1a64(std::string_view text) noexcept;

Fingerprint simhash(std::span<const WeightedToken> tokens) noexcept;

inline Fingerprint fingerprint_document(std::string_view document) { return simhash(tokenize(document)); }

int hamming(Fingerprint a, Fingerprint b) noexcept;

// (64 - dist) / 64
double similarity(int dist) noexcept;

struct Comparison {
    int dist = 0;
    bool similar = false;
};

Comparison compare(std::string_view page, Fingerprint reference, int n);

bool is_stopword(std::string_view token) noexcept;

// A homepage fingerprint tied to a domain. Only confirmed references are
// used for comparison.
struct ReferenceFingerprint {
    DomainName domain;
    Fingerprint fp;
    int version = kFingerprintVersion;
    double generated_ts = 0.0;

    friend bool operator==(const ReferenceFingerprint&, const ReferenceFingerprint&) = default;
};

std::string reference_to_json_line(const ReferenceFingerprint& ref);
std::optional<ReferenceFingerprint> parse_reference_line(std::string_view line);

}  // namespace bindwatch
