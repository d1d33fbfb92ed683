#pragma once

#include <functional>
#include <string>
#include <vector>

#include "onas/rng.hpp"
#include "onas/search_space.hpp"

namespace onas {

struct EvoConfig {
  int population = 50;
  int generations = 30;
  double crossover_prob = 0.5;  // per-layer chance of inheriting from parent B
  double mutation_prob = 0.25;  // per-gene resample chance
  std::uint64_t max_flops = 0;  // multiply-accumulate budget; 0 = unconstrained
  bool width_search = true;     // mutate widths as well as kernels
  int max_sample_retries = 1000;
  std::uint64_t seed = 1;
};

struct ScoredGenotype {
  Genotype genotype;
  double fitness = 0.0;
  std::uint64_t flops = 0;
};

struct GenerationStats {
  int generation = 0;
  double best = 0.0;
  double mean = 0.0;
  std::string best_genotype;
};

struct SearchResult {
  ScoredGenotype best;
  std::vector<ScoredGenotype> population;  // final population, best first
  std::vector<GenerationStats> history;
  std::int64_t evaluations = 0;  // fitness calls (cache misses)
};

std::string history_to_csv(const std::vector<GenerationStats>& history);

using FitnessFn = std::function<double(const Genotype&)>;

// Constrained evolutionary search: elitist truncation selection over
// population + offspring, uniform per-layer crossover, per-gene mutation,
// rejection sampling against the resource budget. Fitness values are cached
// by genotype, so repeated candidates cost nothing.
SearchResult evolutionary_search(const SearchSpaceConfig& space, const EvoConfig& cfg,
                                 const FitnessFn& fitness);

// Baseline with the same evaluation budget: population * (generations + 1)
// distinct feasible genotypes, best kept.
SearchResult random_search(const SearchSpaceConfig& space, const EvoConfig& cfg,
                           const FitnessFn& fitness);

}  // namespace onas
