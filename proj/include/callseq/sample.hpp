#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "callseq/features.hpp"
#include "callseq/granularity.hpp"
#include "callseq/journey.hpp"
#include "callseq/vocab.hpp"

namespace callseq {

// Model-ready record. token_ids[i] == 0 exactly where mask[i] == 0; padding
// sits on the right. position_ids count 0..len-1 in chronological order.
struct Sample {
  std::string customer_id;
  std::vector<std::uint32_t> token_ids;    // length l_max
  std::vector<std::uint32_t> position_ids; // length l_max, 0 on padding
  std::vector<std::uint8_t> mask;          // length l_max, 1 = real token
  std::vector<double> nonseq;
  int label = -1;  // -1 when absent

  std::size_t real_length() const;
};

// Tokenizes the journey's most recent l_max events and attaches the
// nonsequential vector. Empty journeys yield nothing.
std::optional<Sample> assemble_sample(const Journey& journey, const GranularityRuleSet& rules,
                                      const Vocabulary& vocab, const FeatureSchema& schema,
                                      std::size_t l_max);

struct DatasetHeader {
  std::size_t l_max = 0;
  std::size_t vocab_size = 0;
  std::size_t nonseq_dim = 0;
  std::string schema_hash_hex;
  std::size_t classes = 0;  // 0 when unlabeled
};

void save_dataset(const std::string& path, const DatasetHeader& header,
                  const std::vector<Sample>& samples);

struct Dataset {
  DatasetHeader header;
  std::vector<Sample> samples;
};

Dataset load_dataset(const std::string& path);

std::string hash_to_hex(std::uint64_t h);

}  // namespace callseq
