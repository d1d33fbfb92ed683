#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "onas/common.hpp"
#include "onas/layers.hpp"
#include "onas/rng.hpp"

namespace onas {

struct StemSpec {
  int out_channels = 8;
  int kernel = 3;
  int stride = 2;
};

// Optional fixed (non-searchable) inverted-residual block right after the
// stem, mirroring the full-scale stage plan.
struct FixedBlockSpec {
  bool present = true;
  int kernel = 3;
  double expansion = 1.0;
  int out_channels = 8;
  int stride = 1;
};

struct StageSpec {
  int num_layers = 2;
  int out_channels = 16;
  int stride = 1;  // stride of the first layer in the stage
  Act activation = Act::Swish;
};

// Layer-wise search space: fixed stem/head, a stack of stages whose blocks
// are searchable in kernel size and expansion ratio.
struct SearchSpaceConfig {
  int input_resolution = 32;
  int input_channels = 3;
  StemSpec stem;
  FixedBlockSpec fixed_block;
  std::vector<StageSpec> stages;
  std::vector<int> kernel_choices = {3, 5};
  std::vector<double> expansion_choices = {2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0};
  int head_channels = 96;  // 1x1 conv width of the classification head

  int num_searchable_layers() const {
    int n = 0;
    for (const auto& s : stages) n += s.num_layers;
    return n;
  }
  double max_expansion() const;
  double min_expansion() const;
};

struct Gene {
  int kernel = 3;
  double expansion = 6.0;
  bool operator==(const Gene&) const = default;
};

// Per-layer (kernel, expansion) choices for every searchable layer.
struct Genotype {
  std::vector<Gene> genes;
  bool operator==(const Genotype&) const = default;
};

// Static per-layer facts derived from the space at its input resolution.
struct LayerInfo {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  Act activation = Act::Swish;
  int in_hw = 0;   // spatial side length at block input
  int out_hw = 0;  // after the depthwise stride
};

// Multiply-add and parameter counts for the backbone (stem + blocks; heads
// are not included). FLOPs here means MACs.
struct ResourceReport {
  std::int64_t flops = 0;
  std::int64_t params = 0;
};

int hidden_channels(int in_channels, double expansion);

std::vector<LayerInfo> layer_infos(const SearchSpaceConfig& space);

void validate_space(const SearchSpaceConfig& space);

void validate_genotype(const SearchSpaceConfig& space, const Genotype& g);

// Number of distinct genotypes; saturates at uint64 max for huge spaces.
std::uint64_t space_size(const SearchSpaceConfig& space, bool width_search = true);

// Uniform sample. With width_search=false the expansion gene is pinned to the
// maximal choice (full width). Under a FLOPs constraint, rejection-samples up
// to `max_retries` times.
Genotype random_genotype(const SearchSpaceConfig& space, Rng& rng, bool width_search = true,
                         std::optional<std::int64_t> max_flops = std::nullopt,
                         int max_retries = 1000);

Genotype min_genotype(const SearchSpaceConfig& space);
Genotype max_genotype(const SearchSpaceConfig& space);

// Exhaustive enumeration (throws if the space exceeds `cap`).
std::vector<Genotype> all_genotypes(const SearchSpaceConfig& space, bool width_search = true,
                                    std::uint64_t cap = 1u << 20);

ResourceReport count_resources(const SearchSpaceConfig& space, const Genotype& g);

std::string encode_genotype(const Genotype& g);
Genotype decode_genotype(const std::string& text, const SearchSpaceConfig& space);

// Stable hash of the space definition (used to tie checkpoints to spaces).
std::uint64_t space_hash(const SearchSpaceConfig& space);
std::string space_to_json(const SearchSpaceConfig& space);
SearchSpaceConfig space_from_json(const std::string& text);

// Desk-scale default space (32x32 inputs, 4 stages x 2 layers) and the
// full-scale stage plan (224x224, 21 searchable layers; shipped for
// reference, not exercised by tests).
SearchSpaceConfig desk_space();
SearchSpaceConfig fullscale_space();

}  // namespace onas
