#include "bindwatch/fingerprint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstdio>
#include <map>
#include <unordered_set>

#include <json.hpp>

namespace bindwatch {

std::string Fingerprint::to_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(bits));
    return buf;
}

std::optional<Fingerprint> Fingerprint::from_hex(std::string_view hex) noexcept {
    if (hex.size() != 16) return std::nullopt;
    std::uint64_t v = 0;
    for (char c : hex) {
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
        else return std::nullopt;
        v = (v << 4) | static_cast<std::uint64_t>(d);
    }
    return Fingerprint{v};
}

namespace {

constexpr std::string_view kStopwords[] = {
    "a",       "about",   "above",  "after",   "again",   "against", "all",     "am",      "an",
    "and",     "any",     "are",    "as",      "at",      "be",      "because", "been",    "before",
    "being",   "below",   "between", "both",   "but",     "by",      "can",     "could",   "did",
    "do",      "does",    "doing",  "down",    "during",  "each",    "few",     "for",     "from",
    "further", "had",     "has",    "have",    "having",  "he",      "her",     "here",    "hers",
    "herself", "him",     "himself", "his",    "how",     "i",       "if",      "in",      "into",
    "is",      "it",      "its",    "itself",  "just",    "me",      "more",    "most",    "my",
    "myself",  "no",      "nor",    "not",     "now",     "of",      "off",     "on",      "once",
    "only",    "or",      "other",  "our",     "ours",    "ourselves", "out",   "over",    "own",
    "same",    "she",     "should", "so",      "some",    "such",    "than",    "that",    "the",
    "their",   "theirs",  "them",   "themselves", "then", "there",   "these",   "they",    "this",
    "those",   "through", "to",     "too",     "under",   "until",   "up",      "very",    "was",
    "we",      "were",    "what",   "when",    "where",   "which",   "while",   "who",     "whom",
    "why",     "will",    "with",   "would",   "you",     "your",    "yours",   "yourself", "yourselves",
};

bool ieq_prefix(std::string_view text, std::size_t pos, std::string_view word) noexcept {
    if (pos + word.size() > text.size()) return false;
    for (std::size_t i = 0; i < word.size(); ++i) {
        char c = text[pos + i];
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        if (c != word[i]) return false;
    }
    return true;
}

bool is_name_end(std::string_view text, std::size_t pos) noexcept {
    if (pos >= text.size()) return true;
    char c = text[pos];
    return c == '>' || c == '/' || c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f';
}

// Case-insensitive search for `needle` (lowercase) from `pos`.
std::size_t ifind(std::string_view text, std::string_view needle, std::size_t pos) noexcept {
    for (std::size_t i = pos; i + needle.size() <= text.size(); ++i) {
        if (ieq_prefix(text, i, needle)) return i;
    }
    return std::string_view::npos;
}

// Length of a valid UTF-8 sequence starting at `pos`, 0 if invalid.
std::size_t utf8_sequence(std::string_view s, std::size_t pos) noexcept {
    auto b = static_cast<unsigned char>(s[pos]);
    std::size_t len;
    std::uint32_t cp;
    if (b >= 0xC2 && b <= 0xDF) {
        len = 2;
        cp = b & 0x1F;
    } else if (b >= 0xE0 && b <= 0xEF) {
        len = 3;
        cp = b & 0x0F;
    } else if (b >= 0xF0 && b <= 0xF4) {
        len = 4;
        cp = b & 0x07;
    } else {
        return 0;
    }
    if (pos + len > s.size()) return 0;
    for (std::size_t i = 1; i < len; ++i) {
        auto c = static_cast<unsigned char>(s[pos + i]);
        if ((c & 0xC0) != 0x80) return 0;
        cp = (cp << 6) | (c & 0x3F);
    }
    if ((len == 3 && cp < 0x800) || (len == 4 && (cp < 0x10000 || cp > 0x10FFFF))) return 0;
    if (cp >= 0xD800 && cp <= 0xDFFF) return 0;
    // general punctuation and no-break space act as separators
    if (cp == 0xA0 || (cp >= 0x2000 && cp <= 0x206F) || cp == 0x3000 || cp == 0xFEFF) return 0;
    return len;
}

}  // namespace

bool is_stopword(std::string_view token) noexcept {
    static const std::unordered_set<std::string_view> set(std::begin(kStopwords), std::end(kStopwords));
    return set.contains(token);
}

std::vector<WeightedToken> tokenize(std::string_view doc) {
    std::map<std::string, int> counts;
    std::string current;
    std::size_t current_chars = 0;

    auto emit = [&] {
        if (current_chars >= 2 && !is_stopword(current)) ++counts[current];
        current.clear();
        current_chars = 0;
    };

    std::size_t i = 0;
    while (i < doc.size()) {
        char c = doc[i];
        if (c == '<' && i + 1 < doc.size() &&
            (std::isalpha(static_cast<unsigned char>(doc[i + 1])) || doc[i + 1] == '/' || doc[i + 1] == '!' ||
             doc[i + 1] == '?')) {
            emit();
            if (doc.compare(i, 4, "<!--") == 0) {
                auto end = doc.find("-->", i + 4);
                i = end == std::string_view::npos ? doc.size() : end + 3;
                continue;
            }
            const char* raw_element = nullptr;
            if (ieq_prefix(doc, i + 1, "script") && is_name_end(doc, i + 7)) raw_element = "</script";
            else if (ieq_prefix(doc, i + 1, "style") && is_name_end(doc, i + 6)) raw_element = "</style";
            auto tag_end = doc.find('>', i + 1);
            if (tag_end == std::string_view::npos) break;
            i = tag_end + 1;
            if (raw_element) {
                auto close = ifind(doc, raw_element, i);
                if (close == std::string_view::npos) break;
                auto close_end = doc.find('>', close);
                i = close_end == std::string_view::npos ? doc.size() : close_end + 1;
            }
            continue;
        }
        if (c == '&') {
            // entity reference: separator
            std::size_t j = i + 1;
            while (j < doc.size() && j - i <= 10 && (std::isalnum(static_cast<unsigned char>(doc[j])) || doc[j] == '#')) ++j;
            if (j < doc.size() && doc[j] == ';' && j > i + 1) {
                emit();
                i = j + 1;
                continue;
            }
            emit();
            ++i;
            continue;
        }
        auto uc = static_cast<unsigned char>(c);
        if (uc < 0x80) {
            if (std::isalnum(uc)) {
                current.push_back(static_cast<char>(std::tolower(uc)));
                ++current_chars;
            } else {
                emit();
            }
            ++i;
            continue;
        }
        if (auto len = utf8_sequence(doc, i)) {
            current.append(doc.substr(i, len));
            ++current_chars;
            i += len;
        } else {
            emit();
            ++i;
        }
    }
    emit();

    std::vector<WeightedToken> out;
    out.reserve(counts.size());
    for (auto& [token, tf] : counts) out.push_back(WeightedToken{token, std::min(tf, kMaxTokenWeight)});
    return out;
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Fingerprint simhash(std::span<const WeightedToken> tokens) noexcept {
    std::array<std::int64_t, 64> lanes{};
    for (const auto& t : tokens) {
        std::uint64_t h = fnv1a64(t.token);
        for (int bit = 0; bit < 64; ++bit) lanes[bit] += ((h >> bit) & 1) ? t.weight : -t.weight;
    }
    std::uint64_t bits = 0;
    for (int bit = 0; bit < 64; ++bit) {
        if (lanes[bit] > 0) bits |= std::uint64_t{1} << bit;
    }
    return Fingerprint{bits};
}

int hamming(Fingerprint a, Fingerprint b) noexcept { return std::popcount(a.bits ^ b.bits); }

double similarity(int dist) noexcept { return (64.0 - dist) / 64.0; }

Comparison compare(std::string_view page, Fingerprint reference, int n) {
    int dist = hamming(fingerprint_document(page), reference);
    return Comparison{dist, dist <= n};
}

std::string reference_to_json_line(const ReferenceFingerprint& ref) {
    nlohmann::json j;
    j["domain"] = ref.domain.str();
    j["fp"] = ref.fp.to_hex();
    j["version"] = ref.version;
    j["generated_ts"] = ref.generated_ts;
    return j.dump();
}

std::optional<ReferenceFingerprint> parse_reference_line(std::string_view line) {
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    try {
        auto domain = try_canonicalize_domain(j.at("domain").get_ref<const std::string&>());
        auto fp = Fingerprint::from_hex(j.at("fp").get_ref<const std::string&>());
        if (!domain || !fp) return std::nullopt;
        return ReferenceFingerprint{std::move(*domain), *fp, j.at("version").get<int>(),
                                    j.at("generated_ts").get<double>()};
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
}

}  // namespace bindwatch
