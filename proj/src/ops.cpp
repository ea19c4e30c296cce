#include "callseq/ops.hpp"

#include <cmath>
#include <limits>

#include "callseq/errors.hpp"

namespace callseq {

double selu(double x) {
  if (x > 0.0) return kSeluLambda * x;
  return kSeluLambda * kSeluAlpha * std::expm1(x);
}

double selu_prime(double x) {
  if (x > 0.0) return kSeluLambda;
  return kSeluLambda * kSeluAlpha * std::exp(x);
}

void softmax_row_inplace(std::span<double> row) {
  double max = -std::numeric_limits<double>::infinity();
  for (double v : row) {
    if (std::isnan(v)) throw NumericError("softmax: NaN input");
    if (v > max) max = v;
  }
  if (std::isinf(max) && max < 0.0) {
    throw NumericError("softmax: all entries are -inf, row cannot be normalized");
  }
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - max);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    softmax_row_inplace({out.row(i), out.cols()});
  }
  return out;
}

std::vector<double> layer_norm(std::span<const double> row, std::span<const double> gain,
                               std::span<const double> bias, double eps) {
  const std::size_t d = row.size();
  double mean = 0.0;
  for (double v : row) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : row) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = gain[i] * ((row[i] - mean) * inv) + bias[i];
  }
  return out;
}

Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix out(rows, cols);
  for (double& v : out.data()) v = rng.next_range(-bound, bound);
  return out;
}

}  // namespace callseq
