#include "callseq/sample.hpp"

#include <fstream>

#include <json.hpp>

#include "callseq/errors.hpp"

namespace callseq {

using nlohmann::json;

std::size_t Sample::real_length() const {
  std::size_t n = 0;
  for (std::uint8_t m : mask) n += m;
  return n;
}

std::optional<Sample> assemble_sample(const Journey& journey, const GranularityRuleSet& rules,
                                      const Vocabulary& vocab, const FeatureSchema& schema,
                                      std::size_t l_max) {
  if (l_max < 1) throw ConfigError("assemble_sample: l_max must be >= 1");
  if (journey.events.empty()) return std::nullopt;
  Sample s;
  s.customer_id = journey.customer_id;
  s.token_ids.assign(l_max, Vocabulary::kPadId);
  s.position_ids.assign(l_max, 0);
  s.mask.assign(l_max, 0);
  std::size_t skip = journey.events.size() > l_max ? journey.events.size() - l_max : 0;
  std::size_t len = journey.events.size() - skip;
  for (std::size_t i = 0; i < len; ++i) {
    s.token_ids[i] = vocab.id_of(apply_granularity(journey.events[skip + i], rules));
    s.position_ids[i] = static_cast<std::uint32_t>(i);
    s.mask[i] = 1;
  }
  s.nonseq = extract_nonseq(journey, schema);
  return s;
}

std::string hash_to_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

void save_dataset(const std::string& path, const DatasetHeader& header,
                  const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write dataset file: " + path);
  json h;
  h["format_version"] = 1;
  h["l_max"] = header.l_max;
  h["vocab_size"] = header.vocab_size;
  h["nonseq_dim"] = header.nonseq_dim;
  h["schema_hash"] = header.schema_hash_hex;
  h["classes"] = header.classes;
  out << h.dump() << '\n';
  for (const Sample& s : samples) {
    json row;
    row["customer_id"] = s.customer_id;
    std::vector<std::uint32_t> tokens;
    for (std::size_t i = 0; i < s.token_ids.size(); ++i) {
      if (s.mask[i]) tokens.push_back(s.token_ids[i]);
    }
    row["tokens"] = tokens;
    row["nonseq"] = s.nonseq;
    if (s.label >= 0) row["label"] = s.label;
    out << row.dump() << '\n';
  }
  if (!out) throw ConfigError("write failed for dataset file: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read dataset file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset file " + path + " is empty");
  Dataset ds;
  try {
    json h = json::parse(line);
    if (h.value("format_version", 0) != 1) {
      throw std::runtime_error("unsupported format_version");
    }
    ds.header.l_max = h.at("l_max").get<std::size_t>();
    ds.header.vocab_size = h.at("vocab_size").get<std::size_t>();
    ds.header.nonseq_dim = h.at("nonseq_dim").get<std::size_t>();
    ds.header.schema_hash_hex = h.at("schema_hash").get<std::string>();
    ds.header.classes = h.at("classes").get<std::size_t>();
  } catch (const std::exception& e) {
    throw ConfigError("dataset header in " + path + ": " + e.what());
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const std::exception& e) {
      throw ConfigError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    Sample s;
    s.customer_id = row.value("customer_id", std::string());
    auto tokens = row.at("tokens").get<std::vector<std::uint32_t>>();
    if (tokens.empty() || tokens.size() > ds.header.l_max) {
      throw ConfigError("dataset line " + std::to_string(line_no) + ": bad token count");
    }
    s.token_ids.assign(ds.header.l_max, Vocabulary::kPadId);
    s.position_ids.assign(ds.header.l_max, 0);
    s.mask.assign(ds.header.l_max, 0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] == Vocabulary::kPadId || tokens[i] >= ds.header.vocab_size) {
        throw ConfigError("dataset line " + std::to_string(line_no) + ": token id out of range");
      }
      s.token_ids[i] = tokens[i];
      s.position_ids[i] = static_cast<std::uint32_t>(i);
      s.mask[i] = 1;
    }
    s.nonseq = row.at("nonseq").get<std::vector<double>>();
    if (s.nonseq.size() != ds.header.nonseq_dim) {
      throw ConfigError("dataset line " + std::to_string(line_no) + ": bad nonseq width");
    }
    s.label = row.value("label", -1);
    if (s.label >= 0 && ds.header.classes > 0 &&
        static_cast<std::size_t>(s.label) >= ds.header.classes) {
      throw ConfigError("dataset line " + std::to_string(line_no) + ": label out of range");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace callseq
