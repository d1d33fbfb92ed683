#include "onas/evo.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "onas/common.hpp"

namespace onas {

namespace {

struct Evaluator {
  const SearchSpaceConfig& space;
  const FitnessFn& fitness;
  std::map<std::string, ScoredGenotype> cache;
  std::int64_t evaluations = 0;

  ScoredGenotype score(const Genotype& g) {
    const std::string key = encode_genotype(g);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    ScoredGenotype s;
    s.genotype = g;
    s.flops = count_resources(space, g).flops;
    s.fitness = fitness(g);
    ++evaluations;
    cache.emplace(key, s);
    return s;
  }
};

bool better(const ScoredGenotype& a, const ScoredGenotype& b) {
  if (a.fitness != b.fitness) return a.fitness > b.fitness;
  if (a.flops != b.flops) return a.flops < b.flops;  // ties: cheaper first
  return encode_genotype(a.genotype) < encode_genotype(b.genotype);
}

bool feasible(const SearchSpaceConfig& space, const Genotype& g, std::uint64_t max_flops) {
  return max_flops == 0 ||
         static_cast<std::uint64_t>(count_resources(space, g).flops) <= max_flops;
}

GenerationStats stats_of(int gen, const std::vector<ScoredGenotype>& pop) {
  GenerationStats s;
  s.generation = gen;
  s.best = pop.front().fitness;
  double acc = 0.0;
  for (const auto& p : pop) acc += p.fitness;
  s.mean = acc / static_cast<double>(pop.size());
  s.best_genotype = encode_genotype(pop.front().genotype);
  return s;
}

void check_config(const EvoConfig& cfg) {
  if (cfg.population < 2) throw ConfigError("search: population must be >= 2");
  if (cfg.generations < 0) throw ConfigError("search: generations must be >= 0");
  if (cfg.mutation_prob < 0 || cfg.mutation_prob > 1 || cfg.crossover_prob < 0 ||
      cfg.crossover_prob > 1)
    throw ConfigError("search: probabilities must lie in [0, 1]");
}

}  // namespace

std::string history_to_csv(const std::vector<GenerationStats>& history) {
  std::ostringstream ss;
  ss << "generation,best_fitness,mean_fitness,best_genotype\n";
  for (const auto& h : history)
    ss << h.generation << "," << h.best << "," << h.mean << "," << h.best_genotype << "\n";
  return ss.str();
}

SearchResult evolutionary_search(const SearchSpaceConfig& space, const EvoConfig& cfg,
                                 const FitnessFn& fitness) {
  check_config(cfg);
  Rng rng(derive_seed(cfg.seed, fnv1a("evolution")));
  Evaluator ev{space, fitness, {}, 0};
  const std::optional<std::int64_t> budget =
      cfg.max_flops ? std::optional<std::int64_t>(static_cast<std::int64_t>(cfg.max_flops))
                    : std::nullopt;

  auto mutate = [&](Genotype g) {
    for (auto& gene : g.genes) {
      if (!rng.bernoulli(cfg.mutation_prob)) continue;
      gene.kernel = space.kernel_choices[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(space.kernel_choices.size()) - 1))];
      gene.expansion = cfg.width_search
                           ? space.expansion_choices[static_cast<std::size_t>(rng.uniform_int(
                                 0, static_cast<int>(space.expansion_choices.size()) - 1))]
                           : space.max_expansion();
    }
    return g;
  };
  auto crossover = [&](const Genotype& a, const Genotype& b) {
    Genotype c = a;
    for (std::size_t i = 0; i < c.genes.size(); ++i)
      if (rng.bernoulli(cfg.crossover_prob)) c.genes[i] = b.genes[i];
    return c;
  };
  auto make_offspring = [&](const std::vector<ScoredGenotype>& pop) {
    for (int t = 0; t < cfg.max_sample_retries; ++t) {
      const auto& pa = pop[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(pop.size()) - 1))];
      const auto& pb = pop[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(pop.size()) - 1))];
      Genotype child = mutate(crossover(pa.genotype, pb.genotype));
      if (feasible(space, child, cfg.max_flops)) return child;
    }
    throw ConstraintError("search: could not produce a feasible offspring");
  };

  std::vector<ScoredGenotype> pop;
  for (int i = 0; i < cfg.population; ++i)
    pop.push_back(
        ev.score(random_genotype(space, rng, cfg.width_search, budget, cfg.max_sample_retries)));
  std::sort(pop.begin(), pop.end(), better);

  SearchResult res;
  res.history.push_back(stats_of(0, pop));
  for (int g = 1; g <= cfg.generations; ++g) {
    std::vector<ScoredGenotype> merged = pop;
    for (int i = 0; i < cfg.population; ++i) merged.push_back(ev.score(make_offspring(pop)));
    std::sort(merged.begin(), merged.end(), better);
    merged.erase(std::unique(merged.begin(), merged.end(),
                             [](const ScoredGenotype& a, const ScoredGenotype& b) {
                               return encode_genotype(a.genotype) == encode_genotype(b.genotype);
                             }),
                 merged.end());
    merged.resize(std::min<std::size_t>(merged.size(), static_cast<std::size_t>(cfg.population)));
    pop = std::move(merged);
    res.history.push_back(stats_of(g, pop));
  }
  res.best = pop.front();
  res.population = std::move(pop);
  res.evaluations = ev.evaluations;
  return res;
}

SearchResult random_search(const SearchSpaceConfig& space, const EvoConfig& cfg,
                           const FitnessFn& fitness) {
  check_config(cfg);
  Rng rng(derive_seed(cfg.seed, fnv1a("random-search")));
  Evaluator ev{space, fitness, {}, 0};
  const std::optional<std::int64_t> budget =
      cfg.max_flops ? std::optional<std::int64_t>(static_cast<std::int64_t>(cfg.max_flops))
                    : std::nullopt;
  const std::int64_t target = static_cast<std::int64_t>(cfg.population) * (cfg.generations + 1);

  SearchResult res;
  std::vector<ScoredGenotype> seen;
  std::int64_t draws = 0;
  while (ev.evaluations < target) {
    if (++draws > 100 * target && ev.evaluations == 0)
      throw ConstraintError("random search: no feasible genotypes found");
    if (draws > 100 * target) break;  // space smaller than the budget
    const ScoredGenotype s =
        ev.score(random_genotype(space, rng, cfg.width_search, budget, cfg.max_sample_retries));
    seen.push_back(s);
    if (res.history.empty() || better(s, res.best)) res.best = s;
    res.history.push_back({static_cast<int>(res.history.size()), res.best.fitness, 0.0,
                           encode_genotype(res.best.genotype)});
  }
  std::sort(seen.begin(), seen.end(), better);
  seen.erase(std::unique(seen.begin(), seen.end(),
                         [](const ScoredGenotype& a, const ScoredGenotype& b) {
                           return encode_genotype(a.genotype) == encode_genotype(b.genotype);
                         }),
             seen.end());
  seen.resize(std::min<std::size_t>(seen.size(), static_cast<std::size_t>(cfg.population)));
  res.population = std::move(seen);
  res.evaluations = ev.evaluations;
  return res;
}

}  // namespace onas
