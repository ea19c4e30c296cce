#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "callseq/checkpoint.hpp"
#include "callseq/errors.hpp"
#include "callseq/events.hpp"
#include "callseq/features.hpp"
#include "callseq/granularity.hpp"
#include "callseq/journey.hpp"
#include "callseq/metrics.hpp"
#include "callseq/model.hpp"
#include "callseq/sample.hpp"
#include "callseq/synth.hpp"
#include "callseq/trainer.hpp"
#include "callseq/vocab.hpp"

namespace {

using namespace callseq;
using nlohmann::json;
namespace fs = std::filesystem;

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  try {
    json j;
    in >> j;
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config file ") + path + ": " + e.what());
  }
}

json section(const json& config, const char* name) {
  if (config.contains(name) && config.at(name).is_object()) return config.at(name);
  return json::object();
}

// Precedence: explicit flag > config file entry > compiled default.
template <typename T>
void take(const json& sec, const char* key, T& out, bool flag_given) {
  if (flag_given || !sec.contains(key)) return;
  try {
    out = sec.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

fs::path ensure_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ConfigError("cannot create output directory: " + dir);
  return p;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

void echo_effective_config(const fs::path& dir, const json& effective) {
  write_text_file(dir / "effective_config.json", effective.dump(2) + "\n");
}

std::vector<Event> read_events(const std::string& path, bool verbose) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read events file: " + path);
  ParseResult parsed = parse_events(in);
  if (!parsed.errors.empty()) {
    std::cerr << parsed.errors.size() << " malformed event lines skipped (first: "
              << parsed.errors.front() << ")\n";
  }
  if (parsed.events.empty()) throw ConfigError("no events parsed from " + path);
  if (verbose) {
    std::cout << "parsed " << parsed.events.size() << " events from " << parsed.lines
              << " lines\n";
  }
  return parsed.events;
}

std::int64_t latest_time(const std::vector<Event>& events) {
  std::int64_t t = 0;
  for (const Event& e : events) t = std::max(t, e.action_time);
  return t;
}

std::map<std::string, int> label_map(const std::string& path) {
  auto rows = load_labels(path);
  std::map<std::string, int> out(rows.begin(), rows.end());
  if (out.size() != rows.size()) throw ConfigError("duplicate customer ids in labels file");
  return out;
}

// Default nonsequential view when no schema file is given: one 90-day recency
// flag per distinct event type, most frequent first, capped at 32 slots.
FeatureSchema auto_schema(const std::vector<Event>& events) {
  std::map<std::string, std::uint64_t> counts;
  for (const Event& e : events) counts[e.event_type] += 1;
  std::vector<std::pair<std::string, std::uint64_t>> order(counts.begin(), counts.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  FeatureSchema schema;
  for (const auto& [type, n] : order) {
    if (schema.features.size() >= 32) break;
    FeatureDescriptor f;
    f.name = "rec90_" + type;
    f.kind = FeatureKind::kRecencyFlag;
    f.field = "event_type";
    f.value = type;
    f.window_days = 90.0;
    schema.features.push_back(f);
  }
  return schema;
}

std::string coverage_report(const std::string& field, const GranularityFit& fit) {
  std::string text = "field " + field + " (total " + std::to_string(fit.total) + ")\n";
  text += "value                 count        total        share\n";
  char line[160];
  for (const CoverageRow& row : fit.coverage) {
    std::snprintf(line, sizeof(line), "%-20s %12llu %12llu     %.6f\n", row.value.c_str(),
                  static_cast<unsigned long long>(row.count),
                  static_cast<unsigned long long>(fit.total), row.share);
    text += line;
  }
  return text;
}

void write_pgm_grid(const fs::path& path, const std::vector<Matrix>& heads) {
  if (heads.empty()) throw ConfigError("no attention heads to render");
  const std::size_t n = heads[0].rows();
  const std::size_t cell = 12, gap = 4;
  const std::size_t panel = n * cell;
  const std::size_t width = heads.size() * panel + (heads.size() - 1) * gap;
  const std::size_t height = panel;
  std::vector<unsigned char> pixels(width * height, 255);
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const std::size_t x0 = h * (panel + gap);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double a = heads[h](i, j);
        a = std::min(1.0, std::max(0.0, a));
        const auto gray = static_cast<unsigned char>(std::lround(255.0 * (1.0 - a)));
        for (std::size_t dy = 0; dy < cell; ++dy) {
          unsigned char* row = pixels.data() + (i * cell + dy) * width + x0 + j * cell;
          std::fill(row, row + cell, gray);
        }
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw ConfigError("failed writing " + path.string());
}

struct SynthArgs {
  SynthConfig config;
};

int run_synth(const SynthArgs& args, const fs::path& out, bool verbose) {
  const SynthConfig& c = args.config;
  SynthManifest manifest = generate(c, (out / "events.jsonl").string(),
                                    (out / "labels.csv").string(),
                                    (out / "manifest.json").string());
  echo_effective_config(out, json{{"subcommand", "synth"},
                                  {"n_customers", c.n_customers},
                                  {"n_classes", c.n_classes},
                                  {"rule_mix", c.rule_mix},
                                  {"noise_rate", c.noise_rate},
                                  {"len_min", c.len_min},
                                  {"len_max", c.len_max},
                                  {"len_skew", c.len_skew},
                                  {"power_exponent", c.power_exponent},
                                  {"n_currencies", c.n_currencies},
                                  {"seed", c.seed}});
  if (verbose) {
    std::cout << describe(manifest);
  } else {
    std::cout << "wrote " << manifest.total_events << " events for " << c.n_customers
              << " customers, order-only fraction s = " << manifest.measured_s << "\n";
  }
  return 0;
}

struct FitArgs {
  std::string events_path;
  std::string counts_path;  // alternative aggregated input: value,count per line
  std::string counts_field = "value";
  std::vector<std::string> fields;
  std::vector<std::string> numeric_specs;  // field:b1,b2,...
  double threshold = 0.90;
};

std::map<std::string, std::uint64_t> read_counts_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read counts file: " + path);
  std::map<std::string, std::uint64_t> counts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line == "value,count") continue;
    const std::size_t comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0) {
      throw ConfigError("counts line " + std::to_string(line_no) + ": expected value,count");
    }
    try {
      counts[line.substr(0, comma)] += std::stoull(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw ConfigError("counts line " + std::to_string(line_no) + ": bad count");
    }
  }
  if (counts.empty()) throw ConfigError("counts file is empty: " + path);
  return counts;
}

FieldRule parse_numeric_spec(const std::string& spec) {
  const std::size_t colon = spec.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= spec.size()) {
    throw ConfigError("numeric field spec must look like name:b1,b2,... got '" + spec + "'");
  }
  FieldRule rule;
  rule.field = spec.substr(0, colon);
  rule.numeric = true;
  std::stringstream rest(spec.substr(colon + 1));
  std::string piece;
  while (std::getline(rest, piece, ',')) {
    try {
      rule.bins.push_back(std::stod(piece));
    } catch (const std::exception&) {
      throw ConfigError("bad bin boundary '" + piece + "' in spec '" + spec + "'");
    }
  }
  if (rule.bins.empty()) throw ConfigError("numeric field spec has no boundaries: " + spec);
  return rule;
}

int run_fit_granularity(const FitArgs& args, const fs::path& out, bool verbose) {
  GranularityRuleSet rules;
  std::string report;
  if (!args.counts_path.empty()) {
    auto counts = read_counts_csv(args.counts_path);
    GranularityFit fit = fit_granularity(counts, args.threshold);
    FieldRule rule;
    rule.field = args.counts_field;
    rule.threshold = args.threshold;
    rule.retained = fit.retained;
    rules.rules.push_back(std::move(rule));
    report += coverage_report(args.counts_field, fit);
  } else {
    if (args.events_path.empty()) {
      throw ConfigError("fit-granularity needs --events or --counts");
    }
    if (args.fields.empty() && args.numeric_specs.empty()) {
      throw ConfigError("fit-granularity needs at least one --field or --numeric-field");
    }
    std::vector<Event> events = read_events(args.events_path, verbose);
    for (const std::string& field : args.fields) {
      std::map<std::string, std::uint64_t> counts;
      for (const Event& e : events) {
        if (const std::string* v = event_field(e, field)) counts[*v] += 1;
      }
      if (counts.empty()) {
        throw ConfigError("field '" + field + "' never occurs in " + args.events_path);
      }
      GranularityFit fit = fit_granularity(counts, args.threshold);
      FieldRule rule;
      rule.field = field;
      rule.threshold = args.threshold;
      rule.retained = fit.retained;
      rules.rules.push_back(std::move(rule));
      report += coverage_report(field, fit);
    }
    for (const std::string& spec : args.numeric_specs) {
      rules.rules.push_back(parse_numeric_spec(spec));
    }
  }
  validate_rules(rules);
  save_rules((out / "rules.json").string(), rules);
  write_text_file(out / "coverage.txt", report);
  echo_effective_config(out, json{{"subcommand", "fit-granularity"},
                                  {"threshold", args.threshold},
                                  {"fields", args.fields},
                                  {"numeric_fields", args.numeric_specs},
                                  {"counts_file", args.counts_path}});
  std::cout << report;
  return 0;
}

struct PrepareArgs {
  std::string events_path;
  std::string labels_path;
  std::string rules_path;
  std::string schema_path;
  std::size_t l_max = 24;
  std::size_t min_count = 1;
  std::size_t classes = 24;
  std::int64_t reference_time = 0;  // 0: newest event in the corpus
};

int run_prepare(const PrepareArgs& args, const fs::path& out, bool verbose) {
  if (args.events_path.empty()) throw ConfigError("prepare needs --events");
  if (args.rules_path.empty()) throw ConfigError("prepare needs --rules");
  std::vector<Event> events = read_events(args.events_path, verbose);
  GranularityRuleSet rules = load_rules(args.rules_path);

  std::set<std::string> attribute_keys;
  for (const Event& e : events) {
    for (const auto& [key, value] : e.attributes) attribute_keys.insert(key);
  }
  FeatureSchema schema =
      args.schema_path.empty() ? auto_schema(events) : load_schema(args.schema_path);
  validate_schema(schema, attribute_keys);

  const std::int64_t ref =
      args.reference_time > 0 ? args.reference_time : latest_time(events);
  std::vector<Journey> journeys = build_journeys(events, args.l_max, ref);

  std::vector<std::string> corpus;
  for (const Journey& j : journeys) {
    for (const Event& e : j.events) corpus.push_back(apply_granularity(e, rules));
  }
  Vocabulary vocab = build_vocabulary(corpus, args.min_count);

  std::map<std::string, int> labels;
  if (!args.labels_path.empty()) labels = label_map(args.labels_path);

  std::vector<Sample> samples;
  std::uint64_t oov_slots = 0, real_slots = 0;
  for (const Journey& j : journeys) {
    auto s = assemble_sample(j, rules, vocab, schema, args.l_max);
    if (!s) continue;
    for (std::size_t i = 0; i < s->token_ids.size(); ++i) {
      if (!s->mask[i]) continue;
      ++real_slots;
      if (s->token_ids[i] == Vocabulary::kOovId) ++oov_slots;
    }
    if (!labels.empty()) {
      auto it = labels.find(j.customer_id);
      if (it == labels.end()) {
        throw ConfigError("customer " + j.customer_id + " missing from labels file");
      }
      if (it->second < 0 || static_cast<std::size_t>(it->second) >= args.classes) {
        throw ConfigError("customer " + j.customer_id + " label outside [0, classes)");
      }
      s->label = it->second;
    }
    samples.push_back(std::move(*s));
  }
  if (samples.empty()) throw ConfigError("no samples assembled (all journeys empty)");

  DatasetHeader header;
  header.l_max = args.l_max;
  header.vocab_size = vocab.size();
  header.nonseq_dim = schema.features.size();
  header.schema_hash_hex = hash_to_hex(schema_hash(schema));
  header.classes = args.classes;
  save_dataset((out / "dataset.jsonl").string(), header, samples);
  save_vocabulary((out / "vocab.json").string(), vocab);
  save_schema((out / "schema.json").string(), schema);
  echo_effective_config(out, json{{"subcommand", "prepare"},
                                  {"l_max", args.l_max},
                                  {"min_count", args.min_count},
                                  {"classes", args.classes},
                                  {"reference_time", ref},
                                  {"schema_file", args.schema_path},
                                  {"rules_file", args.rules_path},
                                  {"schema_hash", header.schema_hash_hex}});
  const double oov_rate =
      real_slots == 0 ? 0.0 : static_cast<double>(oov_slots) / static_cast<double>(real_slots);
  std::cout << "prepared " << samples.size() << " samples from " << journeys.size()
            << " journeys; vocab " << vocab.size() << " tokens; oov rate " << oov_rate << "\n";
  return 0;
}

struct TrainArgs {
  std::string dataset_path;
  ModelConfig model;
  TrainConfig train;
  std::string optimizer = "adam";
  bool baseline = false;
};

ModelConfig model_from_header(const DatasetHeader& header, ModelConfig base) {
  base.vocab_size = header.vocab_size;
  base.l_max = header.l_max;
  base.classes = header.classes;
  base.nonseq_input = header.nonseq_dim;
  return base;
}

int run_train(TrainArgs& args, const fs::path& out, bool verbose) {
  if (args.dataset_path.empty()) throw ConfigError("train needs --dataset");
  args.train.optimizer = optimizer_from_name(args.optimizer);
  Dataset dataset = load_dataset(args.dataset_path);
  ModelConfig mc = model_from_header(dataset.header, args.model);
  mc.validate();
  TrainResult result = args.baseline
                           ? baseline_nonseq_train(dataset.samples, mc, args.train)
                           : train_model(dataset.samples, mc, args.train);
  save_checkpoint((out / "model.bin").string(), result.params);
  write_metrics_jsonl((out / "metrics.jsonl").string(), result.history);
  const std::string table = format_metrics_table(result);
  write_text_file(out / "metrics.txt", table);
  echo_effective_config(
      out, json{{"subcommand", "train"},
                {"dataset", args.dataset_path},
                {"baseline", args.baseline},
                {"model",
                 {{"vocab_size", mc.vocab_size},
                  {"d", mc.d},
                  {"heads", mc.heads},
                  {"blocks", mc.blocks},
                  {"d_ff", mc.d_ff},
                  {"l_max", mc.l_max},
                  {"classes", mc.classes},
                  {"dropout_rate", mc.dropout_rate},
                  {"nonseq_input", mc.nonseq_input},
                  {"nonseq_hidden1", mc.nonseq_hidden1},
                  {"nonseq_hidden2", mc.nonseq_hidden2},
                  {"sequence_branch", !args.baseline}}},
                {"train",
                 {{"batch_size", args.train.batch_size},
                  {"learning_rate", args.train.learning_rate},
                  {"epochs", args.train.epochs},
                  {"optimizer", optimizer_name(args.train.optimizer)},
                  {"adam_beta1", args.train.adam_beta1},
                  {"adam_beta2", args.train.adam_beta2},
                  {"adam_eps", args.train.adam_eps},
                  {"clip_norm", args.train.clip_norm},
                  {"seed", args.train.seed},
                  {"validation_fraction", args.train.validation_fraction},
                  {"shuffle", args.train.shuffle}}}});
  std::cout << table;
  if (verbose) {
    std::cout << "best epoch " << result.best_epoch << ": val accuracy "
              << result.best_val.accuracy << ", val map@3 " << result.best_val.map_at_3 << "\n";
  }
  return 0;
}

struct EvalArgs {
  std::string dataset_path;
  std::string model_path;
};

int run_evaluate(const EvalArgs& args, const fs::path& out, bool verbose) {
  if (args.dataset_path.empty() || args.model_path.empty()) {
    throw ConfigError("evaluate needs --dataset and --model");
  }
  Dataset dataset = load_dataset(args.dataset_path);
  ModelParams params = load_checkpoint(args.model_path);
  std::vector<const Sample*> ptrs;
  for (const Sample& s : dataset.samples) {
    if (s.label < 0) throw ConfigError("evaluate needs labeled samples");
    ptrs.push_back(&s);
  }
  MetricsReport report = evaluate_model(params, ptrs);
  json doc{{"loss", report.loss},
           {"accuracy", report.accuracy},
           {"map_at_3", report.map_at_3},
           {"samples", report.samples},
           {"precision", report.precision},
           {"recall", report.recall}};
  write_text_file(out / "evaluation.json", doc.dump(2) + "\n");
  echo_effective_config(out, json{{"subcommand", "evaluate"},
                                  {"dataset", args.dataset_path},
                                  {"model", args.model_path}});
  char line[160];
  std::snprintf(line, sizeof(line),
                "samples %zu  loss %.4f  accuracy %.4f  map@3 %.4f\n", report.samples,
                report.loss, report.accuracy, report.map_at_3);
  std::cout << line;
  if (verbose) {
    for (std::size_t c = 0; c < report.precision.size(); ++c) {
      std::snprintf(line, sizeof(line), "  class %zu: precision %.4f recall %.4f\n", c,
                    report.precision[c], report.recall[c]);
      std::cout << line;
    }
  }
  return 0;
}

struct PredictArgs {
  std::string dataset_path;
  std::string model_path;
};

int run_predict(const PredictArgs& args, const fs::path& out, bool verbose) {
  if (args.dataset_path.empty() || args.model_path.empty()) {
    throw ConfigError("predict needs --dataset and --model");
  }
  Dataset dataset = load_dataset(args.dataset_path);
  ModelParams params = load_checkpoint(args.model_path);
  std::string text =
      "customer_id,rank1_class,rank1_prob,rank2_class,rank2_prob,rank3_class,rank3_prob\n";
  char piece[64];
  for (const Sample& s : dataset.samples) {
    ForwardResult res = forward(s, params, RunMode::kEval);
    std::vector<int> top = rank_top(res.probs, 3);
    text += s.customer_id;
    for (int cls : top) {
      std::snprintf(piece, sizeof(piece), ",%d,%.6f", cls,
                    res.probs[static_cast<std::size_t>(cls)]);
      text += piece;
    }
    text += "\n";
  }
  write_text_file(out / "predictions.csv", text);
  echo_effective_config(out, json{{"subcommand", "predict"},
                                  {"dataset", args.dataset_path},
                                  {"model", args.model_path}});
  std::cout << "wrote " << dataset.samples.size() << " predictions\n";
  if (verbose) std::cout << "output: " << (out / "predictions.csv").string() << "\n";
  return 0;
}

struct HeatmapArgs {
  std::string events_path;
  std::string customer;
  std::string model_path;
  std::string rules_path;
  std::string vocab_path;
  std::string schema_path;
  std::int64_t reference_time = 0;
};

int run_heatmap(const HeatmapArgs& args, const fs::path& out, bool verbose) {
  if (args.events_path.empty() || args.customer.empty() || args.model_path.empty() ||
      args.rules_path.empty() || args.vocab_path.empty() || args.schema_path.empty()) {
    throw ConfigError(
        "attention-heatmap needs --events, --customer, --model, --rules, --vocab, --schema");
  }
  std::vector<Event> events = read_events(args.events_path, verbose);
  ModelParams params = load_checkpoint(args.model_path);
  GranularityRuleSet rules = load_rules(args.rules_path);
  Vocabulary vocab = load_vocabulary(args.vocab_path);
  FeatureSchema schema = load_schema(args.schema_path);
  const std::int64_t ref =
      args.reference_time > 0 ? args.reference_time : latest_time(events);
  std::vector<Journey> journeys = build_journeys(events, params.config.l_max, ref);
  const Journey* journey = nullptr;
  for (const Journey& j : journeys) {
    if (j.customer_id == args.customer) journey = &j;
  }
  if (journey == nullptr) throw ConfigError("unknown customer id: " + args.customer);
  auto sample = assemble_sample(*journey, rules, vocab, schema, params.config.l_max);
  if (!sample) throw ConfigError("customer " + args.customer + " has an empty journey");
  AttentionMap map = export_attention(*sample, params, vocab);

  std::string labels_text;
  for (const std::string& label : map.labels) labels_text += label + "\n";
  write_text_file(out / "tokens.txt", labels_text);
  char piece[64];
  for (std::size_t h = 0; h < map.heads.size(); ++h) {
    std::string tsv = "token";
    for (const std::string& label : map.labels) tsv += "\t" + label;
    tsv += "\n";
    for (std::size_t i = 0; i < map.heads[h].rows(); ++i) {
      tsv += map.labels[i];
      for (std::size_t j = 0; j < map.heads[h].cols(); ++j) {
        std::snprintf(piece, sizeof(piece), "\t%.9f", map.heads[h](i, j));
        tsv += piece;
      }
      tsv += "\n";
    }
    write_text_file(out / ("head_" + std::to_string(h) + ".tsv"), tsv);
  }
  write_pgm_grid(out / "attention.pgm", map.heads);
  echo_effective_config(out, json{{"subcommand", "attention-heatmap"},
                                  {"customer", args.customer},
                                  {"model", args.model_path},
                                  {"heads", map.heads.size()},
                                  {"tokens", map.labels.size()}});
  std::cout << "wrote " << map.heads.size() << " attention panels over " << map.labels.size()
            << " tokens\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"behavior-sequence pipeline: granularity fitting, feature assembly, "
               "transformer training, and attention export"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool verbose = false;
  app.add_option("--config", config_path, "JSON config file; explicit flags override it");
  app.add_option("--out-dir", out_dir, "directory for output files")->capture_default_str();
  app.add_option("--seed", seed, "root seed for all randomized steps")
      ->capture_default_str();
  app.add_flag("--verbose", verbose, "chatty progress output");

  SynthArgs synth_args;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a planted-rule event corpus");
  synth_cmd->add_option("--customers", synth_args.config.n_customers)->capture_default_str();
  synth_cmd->add_option("--classes", synth_args.config.n_classes)->capture_default_str();
  synth_cmd->add_option("--rule-mix", synth_args.config.rule_mix)->capture_default_str();
  synth_cmd->add_option("--noise", synth_args.config.noise_rate)->capture_default_str();
  synth_cmd->add_option("--len-min", synth_args.config.len_min)->capture_default_str();
  synth_cmd->add_option("--len-max", synth_args.config.len_max)->capture_default_str();
  synth_cmd->add_option("--len-skew", synth_args.config.len_skew,
                        "length-law exponent; 1 = uniform")
      ->capture_default_str();
  synth_cmd->add_option("--power-exponent", synth_args.config.power_exponent)
      ->capture_default_str();
  synth_cmd->add_option("--currencies", synth_args.config.n_currencies)->capture_default_str();

  FitArgs fit_args;
  CLI::App* fit_cmd =
      app.add_subcommand("fit-granularity", "fit long-tail retention rules per field");
  fit_cmd->add_option("--events", fit_args.events_path, "events JSONL input");
  fit_cmd->add_option("--counts", fit_args.counts_path, "aggregated value,count CSV input");
  fit_cmd->add_option("--counts-field", fit_args.counts_field,
                      "field name recorded for --counts input")
      ->capture_default_str();
  fit_cmd->add_option("--field", fit_args.fields, "categorical field to fit (repeatable)");
  fit_cmd->add_option("--numeric-field", fit_args.numeric_specs,
                      "numeric field spec name:b1,b2,... (repeatable)");
  fit_cmd->add_option("--threshold", fit_args.threshold, "cumulative share to retain")
      ->capture_default_str();

  PrepareArgs prepare_args;
  CLI::App* prepare_cmd =
      app.add_subcommand("prepare", "events + rules + labels -> model-ready dataset");
  prepare_cmd->add_option("--events", prepare_args.events_path, "events JSONL input");
  prepare_cmd->add_option("--labels", prepare_args.labels_path, "customer_id,class_id CSV");
  prepare_cmd->add_option("--rules", prepare_args.rules_path, "granularity rules JSON");
  prepare_cmd->add_option("--schema", prepare_args.schema_path,
                          "feature schema JSON (default: auto recency flags)");
  prepare_cmd->add_option("--l-max", prepare_args.l_max)->capture_default_str();
  prepare_cmd->add_option("--min-count", prepare_args.min_count)->capture_default_str();
  prepare_cmd->add_option("--classes", prepare_args.classes)->capture_default_str();
  prepare_cmd->add_option("--reference-time", prepare_args.reference_time,
                          "recency anchor (default: newest event)");

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train the classifier on a dataset");
  train_cmd->add_option("--dataset", train_args.dataset_path, "prepared dataset JSONL");
  train_cmd->add_option("--d", train_args.model.d)->capture_default_str();
  train_cmd->add_option("--heads", train_args.model.heads)->capture_default_str();
  train_cmd->add_option("--blocks", train_args.model.blocks)->capture_default_str();
  train_cmd->add_option("--d-ff", train_args.model.d_ff)->capture_default_str();
  train_cmd->add_option("--dropout", train_args.model.dropout_rate)->capture_default_str();
  train_cmd->add_option("--hidden1", train_args.model.nonseq_hidden1)->capture_default_str();
  train_cmd->add_option("--hidden2", train_args.model.nonseq_hidden2)->capture_default_str();
  train_cmd->add_option("--batch-size", train_args.train.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", train_args.train.learning_rate)->capture_default_str();
  train_cmd->add_option("--epochs", train_args.train.epochs)->capture_default_str();
  train_cmd->add_option("--optimizer", train_args.optimizer, "adam or sgd")
      ->capture_default_str();
  train_cmd->add_option("--clip-norm", train_args.train.clip_norm)->capture_default_str();
  train_cmd->add_option("--val-fraction", train_args.train.validation_fraction)
      ->capture_default_str();
  train_cmd->add_flag("--no-shuffle", "keep epoch order fixed");
  train_cmd->add_flag("--baseline", train_args.baseline,
                      "ablate the sequence branch (nonseq tower only)");

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a labeled dataset");
  eval_cmd->add_option("--dataset", eval_args.dataset_path);
  eval_cmd->add_option("--model", eval_args.model_path);

  PredictArgs predict_args;
  CLI::App* predict_cmd =
      app.add_subcommand("predict", "emit top-3 classes with probabilities per customer");
  predict_cmd->add_option("--dataset", predict_args.dataset_path);
  predict_cmd->add_option("--model", predict_args.model_path);

  HeatmapArgs heatmap_args;
  CLI::App* heatmap_cmd =
      app.add_subcommand("attention-heatmap", "export one customer's attention maps");
  heatmap_cmd->add_option("--events", heatmap_args.events_path);
  heatmap_cmd->add_option("--customer", heatmap_args.customer);
  heatmap_cmd->add_option("--model", heatmap_args.model_path);
  heatmap_cmd->add_option("--rules", heatmap_args.rules_path);
  heatmap_cmd->add_option("--vocab", heatmap_args.vocab_path);
  heatmap_cmd->add_option("--schema", heatmap_args.schema_path);
  heatmap_cmd->add_option("--reference-time", heatmap_args.reference_time);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const json config = load_config_file(config_path);
    if (!app.count("--out-dir")) {
      std::string dir = out_dir;
      take(config, "out_dir", dir, false);
      out_dir = dir;
    }
    if (!app.count("--seed")) take(config, "seed", seed, false);
    const fs::path out = ensure_dir(out_dir);

    if (synth_cmd->parsed()) {
      const json sec = section(config, "synth");
      SynthConfig& c = synth_args.config;
      take(sec, "n_customers", c.n_customers, synth_cmd->count("--customers") > 0);
      take(sec, "n_classes", c.n_classes, synth_cmd->count("--classes") > 0);
      take(sec, "rule_mix", c.rule_mix, synth_cmd->count("--rule-mix") > 0);
      take(sec, "noise_rate", c.noise_rate, synth_cmd->count("--noise") > 0);
      take(sec, "len_min", c.len_min, synth_cmd->count("--len-min") > 0);
      take(sec, "len_max", c.len_max, synth_cmd->count("--len-max") > 0);
      take(sec, "len_skew", c.len_skew, synth_cmd->count("--len-skew") > 0);
      take(sec, "power_exponent", c.power_exponent, synth_cmd->count("--power-exponent") > 0);
      take(sec, "n_currencies", c.n_currencies, synth_cmd->count("--currencies") > 0);
      c.seed = seed;
      return run_synth(synth_args, out, verbose);
    }
    if (fit_cmd->parsed()) {
      const json sec = section(config, "fit_granularity");
      take(sec, "threshold", fit_args.threshold, fit_cmd->count("--threshold") > 0);
      return run_fit_granularity(fit_args, out, verbose);
    }
    if (prepare_cmd->parsed()) {
      const json sec = section(config, "prepare");
      take(sec, "l_max", prepare_args.l_max, prepare_cmd->count("--l-max") > 0);
      take(sec, "min_count", prepare_args.min_count, prepare_cmd->count("--min-count") > 0);
      take(sec, "classes", prepare_args.classes, prepare_cmd->count("--classes") > 0);
      return run_prepare(prepare_args, out, verbose);
    }
    if (train_cmd->parsed()) {
      const json model_sec = section(config, "model");
      ModelConfig& mc = train_args.model;
      take(model_sec, "d", mc.d, train_cmd->count("--d") > 0);
      take(model_sec, "heads", mc.heads, train_cmd->count("--heads") > 0);
      take(model_sec, "blocks", mc.blocks, train_cmd->count("--blocks") > 0);
      take(model_sec, "d_ff", mc.d_ff, train_cmd->count("--d-ff") > 0);
      take(model_sec, "dropout_rate", mc.dropout_rate, train_cmd->count("--dropout") > 0);
      take(model_sec, "nonseq_hidden1", mc.nonseq_hidden1, train_cmd->count("--hidden1") > 0);
      take(model_sec, "nonseq_hidden2", mc.nonseq_hidden2, train_cmd->count("--hidden2") > 0);
      const json train_sec = section(config, "train");
      TrainConfig& tc = train_args.train;
      take(train_sec, "batch_size", tc.batch_size, train_cmd->count("--batch-size") > 0);
      take(train_sec, "learning_rate", tc.learning_rate, train_cmd->count("--lr") > 0);
      take(train_sec, "epochs", tc.epochs, train_cmd->count("--epochs") > 0);
      take(train_sec, "optimizer", train_args.optimizer, train_cmd->count("--optimizer") > 0);
      take(train_sec, "clip_norm", tc.clip_norm, train_cmd->count("--clip-norm") > 0);
      take(train_sec, "validation_fraction", tc.validation_fraction,
           train_cmd->count("--val-fraction") > 0);
      tc.seed = seed;
      tc.shuffle = train_cmd->count("--no-shuffle") == 0;
      if (tc.shuffle) take(train_sec, "shuffle", tc.shuffle, false);
      return run_train(train_args, out, verbose);
    }
    if (eval_cmd->parsed()) return run_evaluate(eval_args, out, verbose);
    if (predict_cmd->parsed()) return run_predict(predict_args, out, verbose);
    if (heatmap_cmd->parsed()) return run_heatmap(heatmap_args, out, verbose);
    throw ConfigError("no subcommand selected");
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
