#include "onas/rank.hpp"

#include <algorithm>
#include <cmath>

#include "onas/common.hpp"

namespace onas {

namespace {

void check_inputs(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw UsageError("rank correlation: size mismatch");
  if (a.size() < 2) throw UsageError("rank correlation: need at least 2 items");
}

// concordant minus discordant, plus tie counts (O(n^2); n stays small here)
struct PairCounts {
  double cd = 0;      // concordant - discordant
  double concordant = 0, discordant = 0;
  double ties_a = 0, ties_b = 0;  // tied in exactly one scoring
};

PairCounts count_pairs(const std::vector<double>& a, const std::vector<double>& b) {
  PairCounts c;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0 && db == 0) continue;
      if (da == 0) {
        ++c.ties_a;
      } else if (db == 0) {
        ++c.ties_b;
      } else if (da * db > 0) {
        ++c.concordant;
      } else {
        ++c.discordant;
      }
    }
  c.cd = c.concordant - c.discordant;
  return c;
}

}  // namespace

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  check_inputs(a, b);
  const PairCounts c = count_pairs(a, b);
  const double n0a = c.concordant + c.discordant + c.ties_b;  // pairs untied in a
  const double n0b = c.concordant + c.discordant + c.ties_a;  // pairs untied in b
  const double denom = std::sqrt(n0a * n0b);
  if (denom == 0) throw NumericError("kendall_tau: all pairs tied in one scoring");
  return c.cd / denom;
}

double pairwise_agreement(const std::vector<double>& a, const std::vector<double>& b) {
  check_inputs(a, b);
  const PairCounts c = count_pairs(a, b);
  const double untied = c.concordant + c.discordant;
  if (untied == 0) throw NumericError("pairwise_agreement: no untied pairs");
  return c.concordant / untied;
}

double median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace onas
