#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace callseq {

// Class ids ordered by descending score, ties broken by ascending id; at most
// min(k, scores.size()) entries.
std::vector<int> rank_top(std::span<const double> scores, std::size_t k);

// Mean over samples of 1/rank of the true label within the first three ranked
// entries (or all of them when fewer than three classes exist), else 0.
double map_at_3(const std::vector<std::vector<int>>& rankings, std::span<const int> labels);

// Fraction of samples whose best-scoring class (ties to the lowest id) is the label.
double accuracy(const std::vector<std::vector<double>>& scores, std::span<const int> labels);

}  // namespace callseq
