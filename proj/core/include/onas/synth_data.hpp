#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onas/rng.hpp"
#include "onas/tensor.hpp"

namespace onas {

enum class Split { Train, Val, Test };
const char* split_name(Split s);

struct DatasetSpec {
  bool segmentation = false;
  int num_classes = 4;
  int resolution = 32;
  int channels = 3;
  int train_size = 512;
  int val_size = 128;
  int test_size = 128;
  double noise_std = 0.08;
  std::uint64_t seed = 1;
};

// One example. `target` holds a single class id for classification, or a
// row-major per-pixel mask for segmentation.
struct Sample {
  Tensor<float> image;
  std::vector<int> target;
};

struct Dataset {
  DatasetSpec spec;
  Split split = Split::Train;
  std::vector<Sample> items;

  int size() const { return static_cast<int>(items.size()); }
};

// Deterministic procedural dataset: same spec and split always yields the
// same bytes, and the three splits draw from disjoint random streams.
Dataset make_dataset(const DatasetSpec& spec, Split split);

// Pack samples into a batch; targets are concatenated in sample order.
void make_batch(const Dataset& ds, const std::vector<int>& indices,
                Tensor<float>& images, std::vector<int>& targets);

// Random pad-crop and horizontal mirror; mask-consistent for segmentation.
Sample augment(const Sample& s, bool segmentation, Rng& rng);

}  // namespace onas
