#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "callseq/errors.hpp"
#include "callseq/events.hpp"
#include "callseq/journey.hpp"
#include "callseq/synth.hpp"

using namespace callseq;

namespace {

struct SynthFiles {
  std::string events;
  std::string labels;
  std::string manifest;
};

SynthFiles temp_paths(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / "callseq_tests" / ("synth_" + tag);
  std::filesystem::create_directories(dir);
  return SynthFiles{(dir / "events.jsonl").string(), (dir / "labels.csv").string(),
                    (dir / "manifest.json").string()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<Event> parse_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  ParseResult result = parse_events(in);
  REQUIRE(result.errors.empty());
  return result.events;
}

// Independent rule-firing oracle: which rule's tokens all occur, and in what
// order, decides the pre-noise class.
int lookup_class(const Journey& journey, const std::vector<RuleSpec>& rules) {
  std::map<std::string, std::size_t> first;
  for (std::size_t i = 0; i < journey.events.size(); ++i) {
    first.emplace(journey.events[i].event_type, i);
  }
  for (const RuleSpec& rule : rules) {
    bool all = true;
    for (const std::string& token : rule.tokens) all = all && first.count(token) > 0;
    if (!all) continue;
    if (rule.kind == "pair") {
      return first[rule.tokens[0]] < first[rule.tokens[1]] ? rule.classes[0] : rule.classes[1];
    }
    if (rule.kind == "triple") {
      std::size_t arg = 0;
      for (std::size_t t = 1; t < 3; ++t) {
        if (first[rule.tokens[t]] < first[rule.tokens[arg]]) arg = t;
      }
      return rule.classes[arg];
    }
    return rule.classes[0];
  }
  return -1;
}

bool rule_is_sequential(const Journey& journey, const std::vector<RuleSpec>& rules) {
  std::map<std::string, bool> present;
  for (const Event& e : journey.events) present[e.event_type] = true;
  for (const RuleSpec& rule : rules) {
    bool all = true;
    for (const std::string& token : rule.tokens) all = all && present.count(token) > 0;
    if (all) return rule.kind != "marker";
  }
  return false;
}

}  // namespace

TEST_CASE("generate: same seed is bitwise identical, another seed is not") {
  SynthConfig c;
  c.n_customers = 60;
  c.seed = 7;
  SynthFiles a = temp_paths("bitwise_a");
  SynthFiles b = temp_paths("bitwise_b");
  generate(c, a.events, a.labels, a.manifest);
  generate(c, b.events, b.labels, b.manifest);
  CHECK(slurp(a.events) == slurp(b.events));
  CHECK(slurp(a.labels) == slurp(b.labels));
  CHECK(slurp(a.manifest) == slurp(b.manifest));
  c.seed = 8;
  SynthFiles d = temp_paths("bitwise_d");
  generate(c, d.events, d.labels, d.manifest);
  CHECK(slurp(a.events) != slurp(d.events));
}

TEST_CASE("generate: output parses cleanly and counts line up") {
  SynthConfig c;
  c.n_customers = 80;
  c.seed = 11;
  SynthFiles f = temp_paths("parse");
  SynthManifest manifest = generate(c, f.events, f.labels, f.manifest);
  std::vector<Event> events = parse_file(f.events);
  CHECK(events.size() == manifest.total_events);
  std::vector<Journey> journeys = build_journeys(events, 64, 0);
  CHECK(journeys.size() == c.n_customers);
  for (const Journey& j : journeys) {
    CHECK(j.events.size() >= c.len_min);
    CHECK(j.events.size() <= c.len_max);
  }
  auto labels = load_labels(f.labels);
  CHECK(labels.size() == c.n_customers);
  std::uint64_t counted = 0;
  for (std::uint64_t n : manifest.class_counts) counted += n;
  CHECK(counted == c.n_customers);
}

TEST_CASE("manifest: priors sum to one and the report names every class") {
  SynthConfig c;
  c.n_customers = 120;
  c.seed = 13;
  SynthFiles f = temp_paths("manifest");
  SynthManifest manifest = generate(c, f.events, f.labels, f.manifest);
  double prior_sum = 0.0;
  for (std::uint64_t n : manifest.class_counts) {
    prior_sum += static_cast<double>(n) / static_cast<double>(c.n_customers);
  }
  CHECK(std::abs(prior_sum - 1.0) < 1e-9);
  std::string report = describe(manifest);
  for (std::size_t cls = 0; cls < c.n_classes; ++cls) {
    CHECK(report.find("class " + std::to_string(cls) + ":") != std::string::npos);
  }
  CHECK(report.find("order-only fraction") != std::string::npos);

  SynthManifest reloaded = load_manifest(f.manifest);
  CHECK(reloaded.measured_s == manifest.measured_s);
  CHECK(reloaded.total_events == manifest.total_events);
  CHECK(reloaded.class_counts == manifest.class_counts);
  CHECK(reloaded.rules.size() == manifest.rules.size());
  CHECK(describe(reloaded) == report);
}

TEST_CASE("generate: with zero noise a rule-lookup classifier is perfect") {
  SynthConfig c;
  c.n_customers = 250;
  c.noise_rate = 0.0;
  c.seed = 17;
  SynthFiles f = temp_paths("lookup");
  SynthManifest manifest = generate(c, f.events, f.labels, f.manifest);
  std::vector<Journey> journeys = build_journeys(parse_file(f.events), 64, 0);
  auto labels = load_labels(f.labels);
  REQUIRE(journeys.size() == labels.size());
  std::map<std::string, int> by_id(labels.begin(), labels.end());
  for (const Journey& j : journeys) {
    CHECK(lookup_class(j, manifest.rules) == by_id.at(j.customer_id));
  }
}

TEST_CASE("generate: swapping a pair rule's tokens flips the fired class") {
  SynthConfig c;
  c.n_customers = 100;
  c.noise_rate = 0.0;
  c.rule_mix = 1.0;
  c.seed = 19;
  SynthFiles f = temp_paths("swap");
  SynthManifest manifest = generate(c, f.events, f.labels, f.manifest);
  std::vector<Journey> journeys = build_journeys(parse_file(f.events), 64, 0);
  std::size_t pairs_seen = 0;
  for (Journey& j : journeys) {
    const int before = lookup_class(j, manifest.rules);
    if (before < 0 || before >= 16) continue;  // pair-rule classes only
    ++pairs_seen;
    // Relabel every a as b and vice versa; the multiset of tokens is intact
    // (copies come in whole pairs) while the order reads reversed.
    std::vector<std::size_t> rule_pos;
    for (std::size_t i = 0; i < j.events.size(); ++i) {
      if (j.events[i].event_type.rfind("act_p", 0) == 0) rule_pos.push_back(i);
    }
    REQUIRE(rule_pos.size() >= 2);
    REQUIRE(rule_pos.size() % 2 == 0);
    const std::string ta = j.events[rule_pos[0]].event_type;
    const std::string tb = j.events[rule_pos[1]].event_type;
    REQUIRE(ta != tb);
    for (const std::size_t i : rule_pos) {
      j.events[i].event_type = j.events[i].event_type == ta ? tb : ta;
    }
    const int after = lookup_class(j, manifest.rules);
    CHECK(after != before);
    CHECK(after / 2 == before / 2);  // stays within the same pair group
  }
  CHECK(pairs_seen > 30);
}

TEST_CASE("manifest: measured s matches an independent recount") {
  SynthConfig c;
  c.n_customers = 200;
  c.seed = 23;
  SynthFiles f = temp_paths("recount");
  SynthManifest manifest = generate(c, f.events, f.labels, f.manifest);
  std::vector<Journey> journeys = build_journeys(parse_file(f.events), 64, 0);
  std::size_t sequential = 0;
  for (const Journey& j : journeys) {
    if (rule_is_sequential(j, manifest.rules)) ++sequential;
  }
  const double recount = static_cast<double>(sequential) / static_cast<double>(journeys.size());
  CHECK(recount == manifest.measured_s);
}

TEST_CASE("generate: label distribution within 3-sigma of configured priors") {
  SynthConfig c;
  c.n_customers = 2000;
  c.seed = 29;
  SynthFiles f = temp_paths("priors");
  SynthManifest manifest = generate(c, f.events, f.labels, f.manifest);
  const double n = static_cast<double>(c.n_customers);
  const std::size_t n_markers = c.n_classes - 19;
  for (std::size_t cls = 0; cls < c.n_classes; ++cls) {
    double base;
    if (cls < 16) {
      base = c.rule_mix / 9.0 / 2.0;
    } else if (cls < 19) {
      base = c.rule_mix / 9.0 / 3.0;
    } else {
      base = (1.0 - c.rule_mix) / static_cast<double>(n_markers);
    }
    const double p = (1.0 - c.noise_rate) * base +
                     c.noise_rate * (1.0 - base) / static_cast<double>(c.n_classes - 1);
    const double sigma = std::sqrt(n * p * (1.0 - p));
    CHECK(std::abs(static_cast<double>(manifest.class_counts[cls]) - n * p) <= 3.0 * sigma);
  }
}

TEST_CASE("generate: filler attributes follow the configured long tail") {
  SynthConfig c;
  c.n_customers = 400;
  c.seed = 31;
  SynthFiles f = temp_paths("tail");
  generate(c, f.events, f.labels, f.manifest);
  std::map<std::string, std::size_t> currency_counts;
  for (const Event& e : parse_file(f.events)) {
    auto it = e.attributes.find("txn_currency_code");
    if (it != e.attributes.end()) currency_counts[it->second] += 1;
  }
  REQUIRE(currency_counts.count("TWD") == 1);
  for (const auto& [code, count] : currency_counts) {
    if (code != "TWD") CHECK(currency_counts["TWD"] > count);
  }
  CHECK(currency_counts.size() > 5);
}

TEST_CASE("config validation rejects out-of-range settings") {
  SynthConfig c;
  c.n_classes = 19;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.len_min = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.noise_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.rule_mix = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.len_max = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(SynthConfig{}.validate());
  CHECK_NOTHROW(build_rule_table(24));
  CHECK(build_rule_table(20).size() == 10);  // 8 pairs + 1 triple + 1 marker
}

TEST_CASE("nonseq_view_bayes_rate: majority arithmetic on exact groups") {
  auto with = [](std::vector<double> nonseq, int label) {
    Sample s;
    s.nonseq = std::move(nonseq);
    s.label = label;
    return s;
  };
  std::vector<Sample> samples{with({1.0, 0.0}, 0), with({1.0, 0.0}, 1), with({0.0, 1.0}, 2),
                              with({0.0, 1.0}, 2)};
  CHECK(std::abs(nonseq_view_bayes_rate(samples) - 0.75) < 1e-12);
  std::vector<Sample> distinct{with({1.0}, 0), with({2.0}, 1)};
  CHECK(nonseq_view_bayes_rate(distinct) == 1.0);
  std::vector<Sample> none;
  CHECK_THROWS_AS(nonseq_view_bayes_rate(none), ConfigError);
}
