#pragma once

#include <span>
#include <vector>

#include "callseq/matrix.hpp"
#include "callseq/rng.hpp"

namespace callseq {

// Scaled exponential linear unit. Constants are the standard
// self-normalizing-network parameterization.
inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

double selu(double x);
double selu_prime(double x);

// Numerically stable softmax of one row in place: subtracts the row max
// before exponentiating. -inf entries get exactly zero weight. Throws
// NumericError on NaN input or when every entry is -inf.
void softmax_row_inplace(std::span<double> row);

// Row-stochastic softmax of every row; each output row sums to 1.
Matrix softmax_rows(const Matrix& m);

// gain * (row - mean) / sqrt(var + eps) + bias, with mean and population
// variance over the row's features. eps > 0 guards constant rows.
std::vector<double> layer_norm(std::span<const double> row, std::span<const double> gain,
                               std::span<const double> bias, double eps);

// Uniform draws from [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))],
// deterministic for a given rng state.
Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace callseq
