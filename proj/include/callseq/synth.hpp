#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "callseq/sample.hpp"

namespace callseq {

struct SynthConfig {
  std::size_t n_customers = 10000;
  // >= 20: 16 pair-order classes + 3 first-of-three classes + (n_classes - 19) marker classes
  std::size_t n_classes = 24;
  double rule_mix = 0.8;  // fraction of customers labeled by an order-sensitive rule
  double noise_rate = 0.05;
  std::size_t len_min = 3;
  std::size_t len_max = 20;
  double len_skew = 3.0;  // length-law exponent on [len_min, len_max]; 1 = uniform
  double power_exponent = 1.2;  // long-tail law for filler attribute values
  std::size_t n_currencies = 30;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RuleSpec {
  std::string kind;                 // "pair" | "triple" | "marker"
  std::vector<std::string> tokens;  // event types planted by the rule
  // pair: {class when tokens[0] first, class when tokens[1] first};
  // triple: class per first-occurring token; marker: one class
  std::vector<int> classes;
};

struct SynthManifest {
  SynthConfig config;
  std::vector<RuleSpec> rules;
  std::vector<std::uint64_t> class_counts;  // post-noise label counts
  double measured_s = 0.0;  // fraction of customers whose label needs token order
  std::uint64_t total_events = 0;
};

// Fixed rule family: 8 token pairs covering classes 0..15 (order picks the
// class), one token triple covering 16..18 (first token picks the class), and
// one marker token per remaining class. Token sets are disjoint by
// construction, so no journey can fire two rules.
std::vector<RuleSpec> build_rule_table(std::size_t n_classes);

SynthManifest generate(const SynthConfig& config, const std::string& events_path,
                       const std::string& labels_path, const std::string& manifest_path);

std::string describe(const SynthManifest& manifest);

void save_manifest(const std::string& path, const SynthManifest& manifest);
SynthManifest load_manifest(const std::string& path);

void save_labels(const std::string& path, const std::vector<std::pair<std::string, int>>& labels);
std::vector<std::pair<std::string, int>> load_labels(const std::string& path);

// Empirical ceiling for any classifier that sees only the nonsequential
// feature vector: group samples by the exact vector, take per-group majority.
double nonseq_view_bayes_rate(const std::vector<Sample>& samples);

}  // namespace callseq
