#include "callseq/grad_check.hpp"

#include <cmath>

#include "callseq/errors.hpp"

namespace callseq {

std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double step) {
  if (step <= 0.0) throw NumericError("finite_difference_gradient: step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = f(probe);
    probe[i] = saved - step;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_difference_gradient: objective returned a non-finite value");
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace callseq
