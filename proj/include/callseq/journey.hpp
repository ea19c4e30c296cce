#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "callseq/events.hpp"

namespace callseq {

// Per-customer event sequence, ascending by action_time (stable on ties),
// holding at most the configured number of most recent events.
struct Journey {
  std::string customer_id;
  std::vector<Event> events;
  std::int64_t reference_time = 0;  // "now" for recency features
};

// Groups by customer (first-appearance order), sorts each group ascending by
// action_time with input order preserved on ties, keeps the max_len latest.
std::vector<Journey> build_journeys(const std::vector<Event>& events, std::size_t max_len,
                                    std::int64_t reference_time);

}  // namespace callseq
