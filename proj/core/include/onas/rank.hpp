#pragma once

#include <vector>

namespace onas {

// Kendall rank correlation with tie correction (tau-b). Both vectors score
// the same items; returns a value in [-1, 1].
double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

// Pairwise ranking agreement in [0, 1]: fraction of concordant pairs among
// pairs untied in both scorings.
double pairwise_agreement(const std::vector<double>& a, const std::vector<double>& b);

double median(std::vector<double> values);

}  // namespace onas
