#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <string>
#include <vector>

namespace callseq {

// One behavioral event. Attribute keys are unique by map construction;
// values are canonicalized to strings at parse time (numerics keep their
// JSON text form so they can be re-parsed for discretization).
struct Event {
  std::string customer_id;
  std::int64_t action_time = 0;  // epoch seconds, > 0
  std::string action_type;
  std::string channel_type;
  std::string object_type;
  std::string event_type;
  std::map<std::string, std::string> attributes;
};

// Resolves a categorical field by name: one of the four top-level codes or
// an attribute key. Returns nullptr when the event has no such field.
// customer_id and action_time are not addressable here by design.
const std::string* event_field(const Event& ev, const std::string& name);

struct ParseOptions {
  // Fraction of malformed lines tolerated before the whole parse is fatal.
  // 1.0 = collect errors but never fail the stream.
  double max_error_rate = 1.0;
};

struct ParseResult {
  std::vector<Event> events;         // input order
  std::vector<std::string> errors;   // "line N: reason", one per bad record
  std::size_t lines = 0;             // non-empty lines seen
};

// Reads JSON Lines (one event object per line). Malformed records are
// collected into `errors` and skipped; the stream itself failing is fatal.
ParseResult parse_events(std::istream& in, const ParseOptions& opts = {});

}  // namespace callseq
