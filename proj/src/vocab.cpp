#include "callseq/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <json.hpp>

#include "callseq/errors.hpp"

namespace callseq {

using nlohmann::json;

Vocabulary::Vocabulary(std::vector<std::string> tokens_by_rank) : tokens_(std::move(tokens_by_rank)) {
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const std::string& token = tokens_[i];
    if (token == kPadToken || token == kOovToken) {
      throw ConfigError("vocabulary: reserved literal '" + token + "' used as a real token");
    }
    if (!ids_.emplace(token, static_cast<std::uint32_t>(i + 2)).second) {
      throw ConfigError("vocabulary: duplicate token '" + token + "'");
    }
  }
}

std::uint32_t Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kOovId : it->second;
}

const std::string& Vocabulary::token_of(std::uint32_t id) const {
  static const std::string pad = kPadToken;
  static const std::string oov = kOovToken;
  if (id == kPadId) return pad;
  if (id == kOovId) return oov;
  if (id - 2 >= tokens_.size()) {
    throw ConfigError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[id - 2];
}

Vocabulary build_vocabulary(const std::vector<std::string>& tokens, std::size_t min_count) {
  if (tokens.empty()) throw ConfigError("build_vocabulary: empty token stream");
  if (min_count < 1) throw ConfigError("build_vocabulary: min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const std::string& t : tokens) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [token, count] : counts) {
    if (count >= min_count) kept.emplace_back(token, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> by_rank;
  by_rank.reserve(kept.size());
  for (auto& [token, count] : kept) by_rank.push_back(std::move(token));
  return Vocabulary(std::move(by_rank));
}

void save_vocabulary(const std::string& path, const Vocabulary& vocab) {
  json j;
  j["format_version"] = 1;
  j["tokens"] = vocab.tokens_by_rank();
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write vocabulary file: " + path);
  out << j.dump(2) << '\n';
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read vocabulary file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("vocabulary file " + path + ": " + e.what());
  }
  if (j.value("format_version", 0) != 1) {
    throw ConfigError("vocabulary file " + path + ": unsupported format_version");
  }
  return Vocabulary(j.at("tokens").get<std::vector<std::string>>());
}

}  // namespace callseq
