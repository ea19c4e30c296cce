#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "callseq/events.hpp"

namespace callseq {

struct CoverageRow {
  std::string value;
  std::uint64_t count = 0;
  double share = 0.0;  // count / total over all observed values
};

struct GranularityFit {
  std::vector<std::string> retained;  // smallest prefix reaching the threshold
  std::vector<CoverageRow> coverage;  // every value, descending count, ties lexicographic
  std::uint64_t total = 0;
};

// Sorts values by descending count (ties lexicographic ascending) and retains
// the smallest prefix whose cumulative share reaches `threshold`. The reserved
// `other_token` literal never enters the retained list, though its count still
// contributes to the total; this keeps refitting on already-bucketed data a
// no-op. If the threshold is unreachable, every candidate is retained.
GranularityFit fit_granularity(const std::map<std::string, std::uint64_t>& counts,
                               double threshold, const std::string& other_token = "other");

// Half-open binning: v < b[0] -> "bin_0", b[k-1] <= v < b[k] -> "bin_k",
// v >= b[last] -> "bin_n". Boundaries must be strictly increasing.
std::string discretize_value(double value, std::span<const double> boundaries);
std::vector<std::string> discretize_numeric(std::span<const double> values,
                                            std::span<const double> boundaries);

struct FieldRule {
  std::string field;                  // top-level code or attribute key
  bool numeric = false;
  double threshold = 0.90;            // categorical only
  std::vector<std::string> retained;  // categorical only
  std::vector<double> bins;           // numeric only
};

struct GranularityRuleSet {
  std::vector<FieldRule> rules;  // order fixes the token's field order
  std::string other_token = "other";
};

// Throws ConfigError on malformed rules (duplicate fields, reserved field
// names, duplicate retained values, non-increasing bins, bad thresholds).
void validate_rules(const GranularityRuleSet& rules);

// Behavior token: event_type joined with "|field=value" per rule, where each
// value is its retained literal, a numeric bin label, or the other token.
// Fields the event lacks are skipped; unparseable numerics fall to "other".
std::string apply_granularity(const Event& ev, const GranularityRuleSet& rules);

void save_rules(const std::string& path, const GranularityRuleSet& rules);
GranularityRuleSet load_rules(const std::string& path);

}  // namespace callseq
