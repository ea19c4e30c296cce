#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace callseq {

// Token table with two reserved ids. Real tokens take ids 2.. ordered by
// descending corpus frequency, ties lexicographic ascending.
class Vocabulary {
 public:
  static constexpr std::uint32_t kPadId = 0;
  static constexpr std::uint32_t kOovId = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kOovToken = "<oov>";

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens_by_rank);

  std::size_t size() const { return tokens_.size() + 2; }  // includes pad/oov
  std::uint32_t id_of(const std::string& token) const;      // unknown -> kOovId
  const std::string& token_of(std::uint32_t id) const;      // out of range -> throws
  const std::vector<std::string>& tokens_by_rank() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;  // tokens_[i] has id i + 2
  std::unordered_map<std::string, std::uint32_t> ids_;
};

// Counts the stream, drops tokens rarer than min_count, assigns ids.
// Empty stream or a stream containing a reserved literal is fatal.
Vocabulary build_vocabulary(const std::vector<std::string>& tokens, std::size_t min_count);

void save_vocabulary(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocabulary(const std::string& path);

}  // namespace callseq
