#pragma once

// Normalized event JSONL: one TrafficEvent per line.

#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "bindwatch/model.hpp"

namespace bindwatch {

std::string base64_encode(std::string_view raw);
// Returns nullopt on invalid input.
std::optional<std::string> base64_decode(std::string_view text);

std::string event_to_json_line(const TrafficEvent& ev);

// Returns nullopt for malformed lines. Unknown keys are ignored.
std::optional<TrafficEvent> parse_event_line(std::string_view line);

struct EventReadCounters {
    std::size_t lines = 0;
    std::size_t events = 0;
    std::size_t skipped = 0;
};

// Streams events from JSONL input; blank lines are ignored, malformed lines
// counted and skipped.
EventReadCounters read_events_jsonl(std::istream& in, const std::function<void(TrafficEvent&&)>& sink);

void write_events_jsonl(std::ostream& out, const TrafficEvent& ev);

}  // namespace bindwatch
