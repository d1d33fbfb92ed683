#include "onas/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

namespace onas {

using json = nlohmann::json;

double SearchSpaceConfig::max_expansion() const {
  return *std::max_element(expansion_choices.begin(), expansion_choices.end());
}
double SearchSpaceConfig::min_expansion() const {
  return *std::min_element(expansion_choices.begin(), expansion_choices.end());
}

int hidden_channels(int in_channels, double expansion) {
  return std::max(1, static_cast<int>(std::lround(expansion * in_channels)));
}

static int ceil_div(int a, int b) { return (a + b - 1) / b; }

std::vector<LayerInfo> layer_infos(const SearchSpaceConfig& space) {
  std::vector<LayerInfo> out;
  int hw = ceil_div(space.input_resolution, space.stem.stride);
  int ch = space.stem.out_channels;
  if (space.fixed_block.present) {
    hw = ceil_div(hw, space.fixed_block.stride);
    ch = space.fixed_block.out_channels;
  }
  for (const auto& st : space.stages) {
    for (int i = 0; i < st.num_layers; ++i) {
      LayerInfo li;
      li.in_channels = ch;
      li.out_channels = st.out_channels;
      li.stride = (i == 0) ? st.stride : 1;
      li.activation = st.activation;
      li.in_hw = hw;
      li.out_hw = ceil_div(hw, li.stride);
      out.push_back(li);
      hw = li.out_hw;
      ch = st.out_channels;
    }
  }
  return out;
}

void validate_space(const SearchSpaceConfig& space) {
  if (space.input_resolution <= 0 || space.input_channels <= 0)
    throw ConfigError("space: input dimensions must be positive");
  if (space.stages.empty()) throw ConfigError("space: at least one stage required");
  if (space.kernel_choices.empty()) throw ConfigError("space: kernel_choices empty");
  if (space.expansion_choices.empty()) throw ConfigError("space: expansion_choices empty");
  for (int k : space.kernel_choices)
    if (k < 1 || k % 2 == 0) throw ConfigError("space: kernels must be odd and positive");
  for (double e : space.expansion_choices)
    if (e <= 0) throw ConfigError("space: expansion ratios must be positive");
  for (const auto& st : space.stages)
    if (st.num_layers < 1 || st.out_channels < 1 || st.stride < 1)
      throw ConfigError("space: malformed stage");
}

void validate_genotype(const SearchSpaceConfig& space, const Genotype& g) {
  const int n = space.num_searchable_layers();
  if (static_cast<int>(g.genes.size()) != n)
    throw StructuralError("genotype: expected " + std::to_string(n) + " genes, got " +
                          std::to_string(g.genes.size()));
  for (std::size_t i = 0; i < g.genes.size(); ++i) {
    const auto& gene = g.genes[i];
    if (std::find(space.kernel_choices.begin(), space.kernel_choices.end(), gene.kernel) ==
        space.kernel_choices.end())
      throw StructuralError("genotype: kernel " + std::to_string(gene.kernel) +
                            " not in space at layer " + std::to_string(i));
    const bool ok = std::any_of(space.expansion_choices.begin(), space.expansion_choices.end(),
                                [&](double e) { return std::abs(e - gene.expansion) < 1e-9; });
    if (!ok)
      throw StructuralError("genotype: expansion not in space at layer " + std::to_string(i));
  }
}

std::uint64_t space_size(const SearchSpaceConfig& space, bool width_search) {
  const std::uint64_t per_layer =
      space.kernel_choices.size() * (width_search ? space.expansion_choices.size() : 1);
  std::uint64_t total = 1;
  for (int i = 0; i < space.num_searchable_layers(); ++i) {
    if (total > std::numeric_limits<std::uint64_t>::max() / per_layer)
      return std::numeric_limits<std::uint64_t>::max();
    total *= per_layer;
  }
  return total;
}

static Genotype sample_unconstrained(const SearchSpaceConfig& space, Rng& rng,
                                     bool width_search) {
  Genotype g;
  g.genes.resize(space.num_searchable_layers());
  for (auto& gene : g.genes) {
    gene.kernel = space.kernel_choices[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(space.kernel_choices.size()) - 1))];
    gene.expansion =
        width_search
            ? space.expansion_choices[static_cast<std::size_t>(rng.uniform_int(
                  0, static_cast<std::int64_t>(space.expansion_choices.size()) - 1))]
            : space.max_expansion();
  }
  return g;
}

Genotype random_genotype(const SearchSpaceConfig& space, Rng& rng, bool width_search,
                         std::optional<std::int64_t> max_flops, int max_retries) {
  if (!max_flops) return sample_unconstrained(space, rng, width_search);
  for (int i = 0; i < max_retries; ++i) {
    Genotype g = sample_unconstrained(space, rng, width_search);
    if (count_resources(space, g).flops <= *max_flops) return g;
  }
  throw ConstraintError("random_genotype: no feasible genotype found in " +
                        std::to_string(max_retries) + " draws (constraint too tight?)");
}

Genotype min_genotype(const SearchSpaceConfig& space) {
  Genotype g;
  g.genes.assign(static_cast<std::size_t>(space.num_searchable_layers()),
                 {*std::min_element(space.kernel_choices.begin(), space.kernel_choices.end()),
                  space.min_expansion()});
  return g;
}

Genotype max_genotype(const SearchSpaceConfig& space) {
  Genotype g;
  g.genes.assign(static_cast<std::size_t>(space.num_searchable_layers()),
                 {*std::max_element(space.kernel_choices.begin(), space.kernel_choices.end()),
                  space.max_expansion()});
  return g;
}

std::vector<Genotype> all_genotypes(const SearchSpaceConfig& space, bool width_search,
                                    std::uint64_t cap) {
  const std::uint64_t total = space_size(space, width_search);
  if (total > cap)
    throw UsageError("all_genotypes: space too large to enumerate (" + std::to_string(total) + ")");
  std::vector<double> expansions =
      width_search ? space.expansion_choices : std::vector<double>{space.max_expansion()};
  const int layers = space.num_searchable_layers();
  std::vector<Genotype> out;
  out.reserve(static_cast<std::size_t>(total));
  Genotype g;
  g.genes.assign(static_cast<std::size_t>(layers), Gene{});
  // odometer over (kernel, expansion) pairs per layer
  std::vector<std::size_t> idx(static_cast<std::size_t>(layers), 0);
  const std::size_t per_layer = space.kernel_choices.size() * expansions.size();
  while (true) {
    for (int l = 0; l < layers; ++l) {
      const std::size_t ki = idx[static_cast<std::size_t>(l)] / expansions.size();
      const std::size_t ei = idx[static_cast<std::size_t>(l)] % expansions.size();
      g.genes[static_cast<std::size_t>(l)] = {space.kernel_choices[ki], expansions[ei]};
    }
    out.push_back(g);
    int l = layers - 1;
    while (l >= 0) {
      if (++idx[static_cast<std::size_t>(l)] < per_layer) break;
      idx[static_cast<std::size_t>(l)] = 0;
      --l;
    }
    if (l < 0) break;
  }
  return out;
}

namespace {

struct BlockCost {
  std::int64_t flops = 0;
  std::int64_t params = 0;
};

// One inverted-residual block with SE. The SE bottleneck width equals the
// block's input channel count.
BlockCost block_cost(int in_ch, int out_ch, int k, double e, int in_hw, int out_hw) {
  const std::int64_t hid = hidden_channels(in_ch, e);
  const std::int64_t se_red = in_ch;
  const std::int64_t in_px = static_cast<std::int64_t>(in_hw) * in_hw;
  const std::int64_t out_px = static_cast<std::int64_t>(out_hw) * out_hw;
  BlockCost c;
  c.flops += static_cast<std::int64_t>(in_ch) * hid * in_px;               // expand 1x1
  c.flops += static_cast<std::int64_t>(k) * k * hid * out_px;              // depthwise
  c.flops += hid * se_red * 2;                                             // SE fc pair
  c.flops += hid * static_cast<std::int64_t>(out_ch) * out_px;             // project 1x1
  c.params += static_cast<std::int64_t>(in_ch) * hid + 2 * hid;            // expand + BN
  c.params += static_cast<std::int64_t>(k) * k * hid + 2 * hid;            // dw + BN
  c.params += hid * se_red + se_red + se_red * hid + hid;                  // SE fc w+b
  c.params += hid * static_cast<std::int64_t>(out_ch) + 2 * out_ch;        // project + BN
  return c;
}

}  // namespace

ResourceReport count_resources(const SearchSpaceConfig& space, const Genotype& g) {
  validate_genotype(space, g);
  ResourceReport r;
  // stem
  const int stem_hw = ceil_div(space.input_resolution, space.stem.stride);
  r.flops += static_cast<std::int64_t>(space.stem.kernel) * space.stem.kernel *
             space.input_channels * space.stem.out_channels * stem_hw * stem_hw;
  r.params += static_cast<std::int64_t>(space.stem.kernel) * space.stem.kernel *
                  space.input_channels * space.stem.out_channels +
              2 * space.stem.out_channels;
  if (space.fixed_block.present) {
    const auto& fb = space.fixed_block;
    const int out_hw = ceil_div(stem_hw, fb.stride);
    const BlockCost c = block_cost(space.stem.out_channels, fb.out_channels, fb.kernel,
                                   fb.expansion, stem_hw, out_hw);
    r.flops += c.flops;
    r.params += c.params;
  }
  const auto infos = layer_infos(space);
  for (std::size_t i = 0; i < infos.size(); ++i) {
    const auto& li = infos[i];
    const auto& gene = g.genes[i];
    const BlockCost c = block_cost(li.in_channels, li.out_channels, gene.kernel, gene.expansion,
                                   li.in_hw, li.out_hw);
    r.flops += c.flops;
    r.params += c.params;
  }
  return r;
}

std::string encode_genotype(const Genotype& g) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < g.genes.size(); ++i) {
    if (i) out += "-";
    std::snprintf(buf, sizeof(buf), "K%d_E%.1f", g.genes[i].kernel, g.genes[i].expansion);
    out += buf;
  }
  return out;
}

Genotype decode_genotype(const std::string& text, const SearchSpaceConfig& space) {
  Genotype g;
  std::size_t pos = 0;
  int layer = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('-', pos), text.size());
    const std::string tok = text.substr(pos, end - pos);
    int kernel = 0;
    double expansion = 0;
    if (std::sscanf(tok.c_str(), "K%d_E%lf", &kernel, &expansion) != 2)
      throw ParseError("genotype token '" + tok + "' malformed at layer " +
                       std::to_string(layer));
    g.genes.push_back({kernel, expansion});
    ++layer;
    if (end == text.size()) break;
    pos = end + 1;
  }
  try {
    validate_genotype(space, g);
  } catch (const StructuralError& e) {
    throw ParseError(e.what());
  }
  return g;
}

static json space_json(const SearchSpaceConfig& s) {
  json j;
  j["input_resolution"] = s.input_resolution;
  j["input_channels"] = s.input_channels;
  j["stem"] = {{"out_channels", s.stem.out_channels},
               {"kernel", s.stem.kernel},
               {"stride", s.stem.stride}};
  j["fixed_block"] = {{"present", s.fixed_block.present},
                      {"kernel", s.fixed_block.kernel},
                      {"expansion", s.fixed_block.expansion},
                      {"out_channels", s.fixed_block.out_channels},
                      {"stride", s.fixed_block.stride}};
  j["stages"] = json::array();
  for (const auto& st : s.stages)
    j["stages"].push_back({{"num_layers", st.num_layers},
                           {"out_channels", st.out_channels},
                           {"stride", st.stride},
                           {"activation", act_name(st.activation)}});
  j["kernel_choices"] = s.kernel_choices;
  j["expansion_choices"] = s.expansion_choices;
  j["head_channels"] = s.head_channels;
  return j;
}

std::string space_to_json(const SearchSpaceConfig& space) {
  return space_json(space).dump(2);
}

static Act act_from_name(const std::string& name) {
  if (name == "relu") return Act::ReLU;
  if (name == "swish") return Act::Swish;
  throw ConfigError("unknown activation '" + name + "'");
}

SearchSpaceConfig space_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("space: invalid JSON: ") + e.what());
  }
  SearchSpaceConfig s;
  try {
    s.input_resolution = j.at("input_resolution").get<int>();
    s.input_channels = j.at("input_channels").get<int>();
    const auto& stem = j.at("stem");
    s.stem = {stem.at("out_channels").get<int>(), stem.at("kernel").get<int>(),
              stem.at("stride").get<int>()};
    const auto& fb = j.at("fixed_block");
    s.fixed_block = {fb.at("present").get<bool>(), fb.at("kernel").get<int>(),
                     fb.at("expansion").get<double>(), fb.at("out_channels").get<int>(),
                     fb.at("stride").get<int>()};
    s.stages.clear();
    for (const auto& st : j.at("stages"))
      s.stages.push_back({st.at("num_layers").get<int>(), st.at("out_channels").get<int>(),
                          st.at("stride").get<int>(),
                          act_from_name(st.at("activation").get<std::string>())});
    s.kernel_choices = j.at("kernel_choices").get<std::vector<int>>();
    s.expansion_choices = j.at("expansion_choices").get<std::vector<double>>();
    s.head_channels = j.at("head_channels").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("space: schema violation: ") + e.what());
  }
  validate_space(s);
  return s;
}

std::uint64_t space_hash(const SearchSpaceConfig& space) {
  return fnv1a(space_json(space).dump());
}

SearchSpaceConfig desk_space() {
  SearchSpaceConfig s;
  s.input_resolution = 32;
  s.input_channels = 3;
  s.stem = {8, 3, 2};
  s.fixed_block = {true, 3, 1.0, 8, 1};
  s.stages = {
      {2, 12, 2, Act::ReLU},
      {2, 16, 1, Act::Swish},
      {2, 24, 2, Act::Swish},
      {2, 32, 1, Act::Swish},
  };
  s.head_channels = 96;
  return s;
}

SearchSpaceConfig fullscale_space() {
  SearchSpaceConfig s;
  s.input_resolution = 224;
  s.input_channels = 3;
  s.stem = {32, 3, 2};
  s.fixed_block = {true, 3, 1.0, 16, 1};
  s.stages = {
      {4, 24, 2, Act::ReLU},
      {4, 40, 2, Act::Swish},
      {4, 80, 2, Act::Swish},
      {4, 112, 1, Act::Swish},
      {4, 192, 2, Act::Swish},
      {1, 320, 1, Act::Swish},
  };
  s.head_channels = 1280;
  return s;
}

}  // namespace onas
