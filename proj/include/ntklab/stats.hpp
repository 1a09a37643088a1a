#pragma once

#include <vector>

namespace ntk {

// Spearman rank correlation with average ranks for ties. +inf values rank
// above every finite value (e.g. "never reached" iteration counts). Returns
// NaN when either series has no rank variance.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// Fractional ranks (1-based, ties averaged).
std::vector<double> average_ranks(const std::vector<double>& v);

double median(std::vector<double> v);

}  // namespace ntk
