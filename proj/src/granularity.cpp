#include "callseq/granularity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include <json.hpp>

#include "callseq/errors.hpp"

namespace callseq {

using nlohmann::json;

GranularityFit fit_granularity(const std::map<std::string, std::uint64_t>& counts,
                               double threshold, const std::string& other_token) {
  if (counts.empty()) throw ConfigError("fit_granularity: empty value counts");
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw ConfigError("fit_granularity: threshold must lie in (0, 1]");
  }
  GranularityFit fit;
  for (const auto& [value, count] : counts) {
    if (count == 0) throw ConfigError("fit_granularity: zero count for value '" + value + "'");
    fit.coverage.push_back({value, count, 0.0});
    fit.total += count;
  }
  std::sort(fit.coverage.begin(), fit.coverage.end(), [](const CoverageRow& a, const CoverageRow& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.value < b.value;
  });
  for (CoverageRow& row : fit.coverage) {
    row.share = static_cast<double>(row.count) / static_cast<double>(fit.total);
  }
  std::uint64_t cumulative = 0;
  bool reached = false;
  for (const CoverageRow& row : fit.coverage) {
    if (row.value == other_token) continue;
    if (reached) break;
    fit.retained.push_back(row.value);
    cumulative += row.count;
    reached = static_cast<double>(cumulative) / static_cast<double>(fit.total) >= threshold;
  }
  if (fit.retained.empty()) {
    throw ConfigError("fit_granularity: no retainable values (only the reserved other token)");
  }
  return fit;
}

std::string discretize_value(double value, std::span<const double> boundaries) {
  if (boundaries.empty()) throw ConfigError("discretize: no bin boundaries");
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (!(boundaries[i - 1] < boundaries[i])) {
      throw ConfigError("discretize: boundaries must be strictly increasing");
    }
  }
  if (std::isnan(value)) throw NumericError("discretize: NaN value");
  auto it = std::upper_bound(boundaries.begin(), boundaries.end(), value);
  return "bin_" + std::to_string(static_cast<std::size_t>(it - boundaries.begin()));
}

std::vector<std::string> discretize_numeric(std::span<const double> values,
                                            std::span<const double> boundaries) {
  std::vector<std::string> labels;
  labels.reserve(values.size());
  for (double v : values) labels.push_back(discretize_value(v, boundaries));
  return labels;
}

void validate_rules(const GranularityRuleSet& rules) {
  std::set<std::string> seen;
  for (const FieldRule& rule : rules.rules) {
    if (rule.field.empty()) throw ConfigError("rules: empty field name");
    if (rule.field == "customer_id" || rule.field == "action_time" || rule.field == "event_type") {
      throw ConfigError("rules: field '" + rule.field + "' cannot be bucketed");
    }
    if (!seen.insert(rule.field).second) {
      throw ConfigError("rules: duplicate field '" + rule.field + "'");
    }
    if (rule.numeric) {
      if (rule.bins.empty()) throw ConfigError("rules: numeric field '" + rule.field + "' has no bins");
      for (std::size_t i = 1; i < rule.bins.size(); ++i) {
        if (!(rule.bins[i - 1] < rule.bins[i])) {
          throw ConfigError("rules: bins for '" + rule.field + "' must be strictly increasing");
        }
      }
    } else {
      if (!(rule.threshold > 0.0 && rule.threshold <= 1.0)) {
        throw ConfigError("rules: threshold for '" + rule.field + "' must lie in (0, 1]");
      }
      std::set<std::string> values;
      for (const std::string& v : rule.retained) {
        if (v == rules.other_token) {
          throw ConfigError("rules: reserved token retained for '" + rule.field + "'");
        }
        if (!values.insert(v).second) {
          throw ConfigError("rules: duplicate retained value '" + v + "' for '" + rule.field + "'");
        }
      }
    }
  }
}

namespace {

// Full-string numeric parse; partial matches like "12abc" do not count.
bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size();
}

}  // namespace

std::string apply_granularity(const Event& ev, const GranularityRuleSet& rules) {
  std::string token = ev.event_type;
  for (const FieldRule& rule : rules.rules) {
    const std::string* raw = event_field(ev, rule.field);
    if (raw == nullptr) continue;
    token += '|';
    token += rule.field;
    token += '=';
    if (rule.numeric) {
      double v = 0.0;
      if (parse_double(*raw, v) && !std::isnan(v)) {
        token += discretize_value(v, rule.bins);
      } else {
        token += rules.other_token;
      }
    } else {
      bool kept = std::find(rule.retained.begin(), rule.retained.end(), *raw) != rule.retained.end();
      token += kept ? *raw : rules.other_token;
    }
  }
  return token;
}

void save_rules(const std::string& path, const GranularityRuleSet& rules) {
  validate_rules(rules);
  json j;
  j["format_version"] = 1;
  j["other_token"] = rules.other_token;
  j["rules"] = json::array();
  for (const FieldRule& rule : rules.rules) {
    json r;
    r["field"] = rule.field;
    r["kind"] = rule.numeric ? "numeric" : "categorical";
    if (rule.numeric) {
      r["bins"] = rule.bins;
    } else {
      r["threshold"] = rule.threshold;
      r["retained"] = rule.retained;
    }
    j["rules"].push_back(std::move(r));
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write rules file: " + path);
  out << j.dump(2) << '\n';
}

GranularityRuleSet load_rules(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read rules file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("rules file " + path + ": " + e.what());
  }
  if (j.value("format_version", 0) != 1) {
    throw ConfigError("rules file " + path + ": unsupported format_version");
  }
  GranularityRuleSet rules;
  rules.other_token = j.value("other_token", std::string("other"));
  for (const json& r : j.at("rules")) {
    FieldRule rule;
    rule.field = r.at("field").get<std::string>();
    rule.numeric = r.at("kind").get<std::string>() == "numeric";
    if (rule.numeric) {
      rule.bins = r.at("bins").get<std::vector<double>>();
    } else {
      rule.threshold = r.value("threshold", 0.90);
      rule.retained = r.at("retained").get<std::vector<std::string>>();
    }
    rules.rules.push_back(std::move(rule));
  }
  validate_rules(rules);
  return rules;
}

}  // namespace callseq
