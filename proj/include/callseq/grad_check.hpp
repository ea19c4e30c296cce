#pragma once

#include <functional>
#include <span>
#include <vector>

namespace callseq {

// Central-difference gradient of f at x: g_i = (f(x+h*e_i) - f(x-h*e_i)) / (2h).
// f must be pure: it may read the span it is handed but not retain it.
// Throws NumericError if any evaluation of f is non-finite.
std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double step);

}  // namespace callseq
