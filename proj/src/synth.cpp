#include "callseq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "callseq/errors.hpp"
#include "callseq/rng.hpp"

namespace callseq {

namespace {

using nlohmann::json;

constexpr std::int64_t kReferenceTime = 1769817600;  // generation horizon, seconds
constexpr std::size_t kPairGroups = 8;
constexpr std::size_t kSequentialClasses = 2 * kPairGroups + 3;

const char* const kCurrencies[] = {
    "TWD", "USD", "JPY", "EUR", "CNY", "GBP", "AUD", "HKD", "KRW", "SGD",
    "THB", "MYR", "IDR", "PHP", "VND", "INR", "CAD", "CHF", "SEK", "NOK",
    "DKK", "NZD", "ZAR", "BRL", "MXN", "PLN", "CZK", "HUF", "TRY", "ILS"};
constexpr std::size_t kMaxCurrencies = sizeof(kCurrencies) / sizeof(kCurrencies[0]);
constexpr std::size_t kPageCategories = 15;

// Cumulative weights of (i+1)^-exponent, so low indices dominate.
struct PowerLaw {
  std::vector<double> cdf;

  PowerLaw(std::size_t n, double exponent) {
    cdf.resize(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += std::pow(static_cast<double>(i + 1), -exponent);
      cdf[i] = total;
    }
    for (double& c : cdf) c /= total;
  }

  std::size_t sample(Rng& rng) const {
    const double u = rng.next_unit();
    return static_cast<std::size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
  }
};

struct EventRow {
  std::int64_t action_time;
  std::string action_type;
  std::string channel_type;
  std::string object_type;
  std::string event_type;
  std::vector<std::pair<std::string, std::string>> attributes;
};

EventRow rule_event(const std::string& token) {
  return EventRow{0, "service", "branch", "service_desk", token, {}};
}

EventRow filler_event(Rng& rng, const PowerLaw& currency_law, const PowerLaw& page_law,
                      std::size_t n_currencies) {
  const double u = rng.next_unit();
  if (u < 0.4) {
    char cat[16];
    std::snprintf(cat, sizeof(cat), "cat_%02zu", page_law.sample(rng));
    return EventRow{0, "browse", "web", "web_portal", "browse_page", {{"page_cat", cat}}};
  }
  if (u < 0.7) {
    std::size_t c = currency_law.sample(rng);
    if (c >= n_currencies) c = n_currencies - 1;
    char amount[32];
    std::snprintf(amount, sizeof(amount), "%.2f", std::exp(rng.next_range(0.0, 8.0)));
    return EventRow{0,
                    "transaction",
                    "store",
                    "credit_card",
                    "cc_transaction",
                    {{"txn_amount", amount}, {"txn_currency_code", kCurrencies[c]}}};
  }
  if (u < 0.9) {
    return EventRow{0, "auth", "mobile", "bank_app", "app_login", {}};
  }
  return EventRow{0, "notify", "mobile", "push_message", "push_open", {}};
}

void validate_rule_table(const std::vector<RuleSpec>& rules, std::size_t n_classes) {
  std::set<std::string> tokens;
  std::set<int> classes;
  for (const RuleSpec& rule : rules) {
    for (const std::string& token : rule.tokens) {
      if (!tokens.insert(token).second) {
        throw ConfigError("rule token '" + token + "' claimed by two rules");
      }
    }
    for (int c : rule.classes) {
      if (c < 0 || static_cast<std::size_t>(c) >= n_classes || !classes.insert(c).second) {
        throw ConfigError("rule classes must cover each class exactly once");
      }
    }
  }
  if (classes.size() != n_classes) {
    throw ConfigError("rule table covers " + std::to_string(classes.size()) + " of " +
                      std::to_string(n_classes) + " classes");
  }
}

json rule_to_json(const RuleSpec& rule) {
  return json{{"kind", rule.kind}, {"tokens", rule.tokens}, {"classes", rule.classes}};
}

RuleSpec rule_from_json(const json& j) {
  RuleSpec rule;
  rule.kind = j.at("kind").get<std::string>();
  rule.tokens = j.at("tokens").get<std::vector<std::string>>();
  rule.classes = j.at("classes").get<std::vector<int>>();
  return rule;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_customers < 1) throw ConfigError("n_customers must be >= 1");
  if (n_classes < kSequentialClasses + 1 || n_classes > 256) {
    throw ConfigError("n_classes must be in [20, 256]");
  }
  if (!(rule_mix >= 0.0 && rule_mix <= 1.0)) throw ConfigError("rule_mix must be in [0, 1]");
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw ConfigError("noise_rate must be in [0, 1)");
  if (len_min < 3) throw ConfigError("len_min must be >= 3 (a planted triple needs 3 slots)");
  if (len_max < len_min || len_max > 64) throw ConfigError("len_max must be in [len_min, 64]");
  if (!(len_skew > 0.0)) throw ConfigError("len_skew must be > 0");
  if (!(power_exponent > 0.0)) throw ConfigError("power_exponent must be > 0");
  if (n_currencies < 2 || n_currencies > kMaxCurrencies) {
    throw ConfigError("n_currencies must be in [2, " + std::to_string(kMaxCurrencies) + "]");
  }
}

std::vector<RuleSpec> build_rule_table(std::size_t n_classes) {
  std::vector<RuleSpec> rules;
  for (std::size_t k = 0; k < kPairGroups; ++k) {
    RuleSpec rule;
    rule.kind = "pair";
    rule.tokens = {"act_p" + std::to_string(k) + "_a", "act_p" + std::to_string(k) + "_b"};
    rule.classes = {static_cast<int>(2 * k), static_cast<int>(2 * k + 1)};
    rules.push_back(std::move(rule));
  }
  RuleSpec triple;
  triple.kind = "triple";
  triple.tokens = {"act_t_x", "act_t_y", "act_t_z"};
  triple.classes = {16, 17, 18};
  rules.push_back(std::move(triple));
  for (std::size_t m = 0; kSequentialClasses + m < n_classes; ++m) {
    RuleSpec rule;
    rule.kind = "marker";
    rule.tokens = {"act_m" + std::to_string(m)};
    rule.classes = {static_cast<int>(kSequentialClasses + m)};
    rules.push_back(std::move(rule));
  }
  validate_rule_table(rules, n_classes);
  return rules;
}

SynthManifest generate(const SynthConfig& config, const std::string& events_path,
                       const std::string& labels_path, const std::string& manifest_path) {
  config.validate();
  SynthManifest manifest;
  manifest.config = config;
  manifest.rules = build_rule_table(config.n_classes);
  manifest.class_counts.assign(config.n_classes, 0);

  const PowerLaw currency_law(config.n_currencies, config.power_exponent);
  const PowerLaw page_law(kPageCategories, config.power_exponent);
  const std::size_t n_markers = config.n_classes - kSequentialClasses;

  std::ofstream events(events_path);
  if (!events) throw ConfigError("cannot write events file: " + events_path);
  std::vector<std::pair<std::string, int>> labels;
  labels.reserve(config.n_customers);
  std::size_t seq_customers = 0;

  for (std::size_t idx = 0; idx < config.n_customers; ++idx) {
    Rng rng(mix_seed(config.seed, 0x63757374ULL * 0x10000ULL + idx));
    char cid[16];
    std::snprintf(cid, sizeof(cid), "C%06zu", idx);
    // Short-biased length law: len = len_min + floor(span * u^skew). Short
    // journeys keep the planted order visible next to the filler traffic.
    const std::size_t span = config.len_max - config.len_min + 1;
    const auto offset = static_cast<std::size_t>(
        static_cast<double>(span) * std::pow(rng.next_unit(), config.len_skew));
    const std::size_t len = config.len_min + std::min(offset, span - 1);

    // Planted tokens occupy the journey's leading slots. Fixed positions keep
    // the ordered signal stable across customers; presence features see no
    // difference between a pair's two orders either way.
    int label = 0;
    std::vector<std::string> planted;
    if (rng.next_unit() < config.rule_mix) {
      ++seq_customers;
      const std::size_t g = rng.next_index(kPairGroups + 1);
      if (g < kPairGroups) {
        const RuleSpec& rule = manifest.rules[g];
        const std::size_t order = rng.next_index(2);
        planted = order == 0 ? rule.tokens
                             : std::vector<std::string>{rule.tokens[1], rule.tokens[0]};
        label = rule.classes[order];
      } else {
        const RuleSpec& rule = manifest.rules[kPairGroups];
        const std::size_t first = rng.next_index(3);
        planted.push_back(rule.tokens[first]);
        std::vector<std::string> rest;
        for (std::size_t t = 0; t < 3; ++t) {
          if (t != first) rest.push_back(rule.tokens[t]);
        }
        if (rng.next_index(2) == 1) std::swap(rest[0], rest[1]);
        planted.push_back(rest[0]);
        planted.push_back(rest[1]);
        label = rule.classes[first];
      }
    } else {
      const std::size_t m = rng.next_index(n_markers);
      const RuleSpec& rule = manifest.rules[kPairGroups + 1 + m];
      planted = rule.tokens;
      label = rule.classes[0];
    }

    for (std::size_t i = 0; i < len; ++i) {
      EventRow row;
      if (i < planted.size()) {
        row = rule_event(planted[i]);
      } else {
        row = filler_event(rng, currency_law, page_law, config.n_currencies);
      }
      row.action_time = kReferenceTime - static_cast<std::int64_t>(len - i) * 3600;
      json record{{"customer_id", cid},
                  {"action_time", row.action_time},
                  {"action_type", row.action_type},
                  {"channel_type", row.channel_type},
                  {"object_type", row.object_type},
                  {"event_type", row.event_type}};
      if (!row.attributes.empty()) {
        json attrs = json::object();
        for (const auto& [key, value] : row.attributes) attrs[key] = value;
        record["attributes"] = attrs;
      }
      events << record.dump() << "\n";
      ++manifest.total_events;
    }

    if (config.noise_rate > 0.0 && rng.next_unit() < config.noise_rate) {
      const std::size_t other = rng.next_index(config.n_classes - 1);
      label = static_cast<int>(other >= static_cast<std::size_t>(label) ? other + 1 : other);
    }
    manifest.class_counts[static_cast<std::size_t>(label)] += 1;
    labels.emplace_back(cid, label);
  }
  if (!events) throw ConfigError("failed writing events file: " + events_path);
  events.close();

  manifest.measured_s =
      static_cast<double>(seq_customers) / static_cast<double>(config.n_customers);
  save_labels(labels_path, labels);
  save_manifest(manifest_path, manifest);
  return manifest;
}

std::string describe(const SynthManifest& manifest) {
  const SynthConfig& c = manifest.config;
  char line[160];
  std::string text;
  std::snprintf(line, sizeof(line),
                "synthetic dataset: %zu customers, %zu classes, %llu events, seed %llu\n",
                c.n_customers, c.n_classes,
                static_cast<unsigned long long>(manifest.total_events),
                static_cast<unsigned long long>(c.seed));
  text += line;
  std::snprintf(line, sizeof(line),
                "rule mix %.2f, noise %.2f, lengths %zu..%zu (skew %.1f), "
                "order-only fraction s = %.4f\n",
                c.rule_mix, c.noise_rate, c.len_min, c.len_max, c.len_skew,
                manifest.measured_s);
  text += line;
  text += "rules:\n";
  for (const RuleSpec& rule : manifest.rules) {
    if (rule.kind == "pair") {
      std::snprintf(line, sizeof(line), "  pair   %s then %s => class %d, reversed => class %d\n",
                    rule.tokens[0].c_str(), rule.tokens[1].c_str(), rule.classes[0],
                    rule.classes[1]);
    } else if (rule.kind == "triple") {
      std::snprintf(line, sizeof(line),
                    "  triple {%s, %s, %s} first token => classes %d, %d, %d\n",
                    rule.tokens[0].c_str(), rule.tokens[1].c_str(), rule.tokens[2].c_str(),
                    rule.classes[0], rule.classes[1], rule.classes[2]);
    } else {
      std::snprintf(line, sizeof(line), "  marker %s => class %d\n", rule.tokens[0].c_str(),
                    rule.classes[0]);
    }
    text += line;
  }
  text += "class priors:\n";
  const double total = static_cast<double>(c.n_customers);
  for (std::size_t cls = 0; cls < manifest.class_counts.size(); ++cls) {
    std::snprintf(line, sizeof(line), "  class %zu: prior %.6f (count %llu)\n", cls,
                  static_cast<double>(manifest.class_counts[cls]) / total,
                  static_cast<unsigned long long>(manifest.class_counts[cls]));
    text += line;
  }
  return text;
}

void save_manifest(const std::string& path, const SynthManifest& manifest) {
  json rules = json::array();
  for (const RuleSpec& rule : manifest.rules) rules.push_back(rule_to_json(rule));
  const SynthConfig& c = manifest.config;
  json doc{{"format_version", 1},
           {"config",
            {{"n_customers", c.n_customers},
             {"n_classes", c.n_classes},
             {"rule_mix", c.rule_mix},
             {"noise_rate", c.noise_rate},
             {"len_min", c.len_min},
             {"len_max", c.len_max},
             {"len_skew", c.len_skew},
             {"power_exponent", c.power_exponent},
             {"n_currencies", c.n_currencies},
             {"seed", c.seed}}},
           {"rules", rules},
           {"class_counts", manifest.class_counts},
           {"measured_s", manifest.measured_s},
           {"total_events", manifest.total_events}};
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write manifest: " + path);
  out << doc.dump(2) << "\n";
  if (!out) throw ConfigError("failed writing manifest: " + path);
}

SynthManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read manifest: " + path);
  json doc;
  try {
    in >> doc;
    if (doc.at("format_version").get<int>() != 1) {
      throw ConfigError("unsupported manifest format_version");
    }
    SynthManifest manifest;
    const json& c = doc.at("config");
    manifest.config.n_customers = c.at("n_customers").get<std::size_t>();
    manifest.config.n_classes = c.at("n_classes").get<std::size_t>();
    manifest.config.rule_mix = c.at("rule_mix").get<double>();
    manifest.config.noise_rate = c.at("noise_rate").get<double>();
    manifest.config.len_min = c.at("len_min").get<std::size_t>();
    manifest.config.len_max = c.at("len_max").get<std::size_t>();
    manifest.config.len_skew = c.at("len_skew").get<double>();
    manifest.config.power_exponent = c.at("power_exponent").get<double>();
    manifest.config.n_currencies = c.at("n_currencies").get<std::size_t>();
    manifest.config.seed = c.at("seed").get<std::uint64_t>();
    for (const json& r : doc.at("rules")) manifest.rules.push_back(rule_from_json(r));
    manifest.class_counts = doc.at("class_counts").get<std::vector<std::uint64_t>>();
    manifest.measured_s = doc.at("measured_s").get<double>();
    manifest.total_events = doc.at("total_events").get<std::uint64_t>();
    return manifest;
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest " + path + ": " + e.what());
  }
}

void save_labels(const std::string& path, const std::vector<std::pair<std::string, int>>& labels) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write labels file: " + path);
  out << "customer_id,class_id\n";
  for (const auto& [cid, label] : labels) out << cid << "," << label << "\n";
  if (!out) throw ConfigError("failed writing labels file: " + path);
}

std::vector<std::pair<std::string, int>> load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read labels file: " + path);
  std::vector<std::pair<std::string, int>> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line == "customer_id,class_id") continue;
    const std::size_t comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 >= line.size()) {
      throw ConfigError("labels line " + std::to_string(line_no) + ": expected id,class");
    }
    try {
      labels.emplace_back(line.substr(0, comma), std::stoi(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw ConfigError("labels line " + std::to_string(line_no) + ": bad class id");
    }
  }
  return labels;
}

double nonseq_view_bayes_rate(const std::vector<Sample>& samples) {
  if (samples.empty()) throw ConfigError("nonseq_view_bayes_rate: no samples");
  std::unordered_map<std::string, std::unordered_map<int, std::size_t>> groups;
  for (const Sample& s : samples) {
    if (s.label < 0) throw ConfigError("nonseq_view_bayes_rate: unlabeled sample");
    std::string key(reinterpret_cast<const char*>(s.nonseq.data()),
                    s.nonseq.size() * sizeof(double));
    groups[key][s.label] += 1;
  }
  std::size_t best = 0;
  for (const auto& [key, counts] : groups) {
    std::size_t top = 0;
    for (const auto& [label, count] : counts) top = std::max(top, count);
    best += top;
  }
  return static_cast<double>(best) / static_cast<double>(samples.size());
}

}  // namespace callseq
