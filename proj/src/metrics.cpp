#include "callseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "callseq/errors.hpp"

namespace callseq {

std::vector<int> rank_top(std::span<const double> scores, std::size_t k) {
  if (scores.empty()) throw ConfigError("rank_top: no scores");
  for (double s : scores) {
    if (std::isnan(s)) throw NumericError("rank_top: score is NaN");
  }
  std::vector<int> ids(scores.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)]) {
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  ids.resize(std::min(k, ids.size()));
  return ids;
}

double map_at_3(const std::vector<std::vector<int>>& rankings, std::span<const int> labels) {
  if (rankings.empty() || rankings.size() != labels.size()) {
    throw ConfigError("map_at_3: rankings and labels must be nonempty and aligned");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto& r = rankings[i];
    if (r.empty()) throw ConfigError("map_at_3: empty ranking");
    const std::size_t depth = std::min<std::size_t>(3, r.size());
    for (std::size_t pos = 0; pos < depth; ++pos) {
      if (r[pos] == labels[i]) {
        total += 1.0 / static_cast<double>(pos + 1);
        break;
      }
    }
  }
  return total / static_cast<double>(rankings.size());
}

double accuracy(const std::vector<std::vector<double>>& scores, std::span<const int> labels) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw ConfigError("accuracy: scores and labels must be nonempty and aligned");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (rank_top(scores[i], 1)[0] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

}  // namespace callseq
