#include "onas/synth_data.hpp"

#include <cmath>

#include "onas/common.hpp"

namespace onas {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Class palettes: a color mix plus a grating (orientation, frequency) that
// together make classes separable but not trivially so (noise is added on
// top and phases are resampled per example).
double class_color(int cls, int ch) {
  return 0.5 + 0.45 * std::sin(2.39996 * cls + 2.09 * ch + 0.7);
}

double class_theta(int cls, int num_classes) { return kPi * cls / num_classes; }
double class_freq(int cls) { return 1.5 + 0.75 * cls; }

void paint_grating(Tensor<float>& img, int cls, int num_classes, double phase,
                   double amp, int y0, int y1, int x0, int x1) {
  const std::int64_t ch = img.dim(1), res = img.dim(2);
  const double th = class_theta(cls, num_classes), fr = class_freq(cls);
  const double cx = std::cos(th), sx = std::sin(th);
  for (std::int64_t c = 0; c < ch; ++c) {
    const double base = class_color(cls, static_cast<int>(c));
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const double u = (x * cx + y * sx) * fr * 2.0 * kPi / static_cast<double>(res);
        img.at4(0, c, y, x) = static_cast<float>(base + amp * std::sin(u + phase));
      }
  }
}

Sample gen_classification(const DatasetSpec& spec, int cls, Rng& rng) {
  Sample s;
  s.image = Tensor<float>::zeros({1, spec.channels, spec.resolution, spec.resolution});
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  paint_grating(s.image, cls, spec.num_classes, phase, 0.35, 0, spec.resolution, 0,
                spec.resolution);
  for (auto& v : s.image.data)
    v = static_cast<float>(v + rng.normal(0.0, spec.noise_std));
  s.target = {cls};
  return s;
}

Sample gen_segmentation(const DatasetSpec& spec, Rng& rng) {
  const int res = spec.resolution;
  Sample s;
  s.image = Tensor<float>::zeros({1, spec.channels, res, res});
  s.target.assign(static_cast<std::size_t>(res) * res, 0);
  paint_grating(s.image, 0, spec.num_classes, rng.uniform(0.0, 2.0 * kPi), 0.2, 0, res, 0,
                res);
  const int shapes = rng.uniform_int(1, 3);
  for (int i = 0; i < shapes; ++i) {
    const int cls = rng.uniform_int(1, spec.num_classes - 1);
    const int r = rng.uniform_int(res / 8, res / 4);
    const int cy = rng.uniform_int(r, res - 1 - r);
    const int cx = rng.uniform_int(r, res - 1 - r);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const double th = class_theta(cls, spec.num_classes), fr = class_freq(cls);
    // shape kind follows the class id: circles, squares, diamonds
    for (int y = cy - r; y <= cy + r; ++y)
      for (int x = cx - r; x <= cx + r; ++x) {
        bool inside = false;
        switch (cls % 3) {
          case 0: inside = true; break;  // square
          case 1:
            inside = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
            break;
          case 2: inside = std::abs(y - cy) + std::abs(x - cx) <= r; break;
        }
        if (!inside) continue;
        s.target[static_cast<std::size_t>(y) * res + x] = cls;
        const double u = (x * std::cos(th) + y * std::sin(th)) * fr * 2.0 * kPi / res;
        for (int c = 0; c < spec.channels; ++c)
          s.image.at4(0, c, y, x) =
              static_cast<float>(class_color(cls, c) + 0.35 * std::sin(u + phase));
      }
  }
  for (auto& v : s.image.data)
    v = static_cast<float>(v + rng.normal(0.0, spec.noise_std));
  return s;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Dataset make_dataset(const DatasetSpec& spec, Split split) {
  if (spec.num_classes < 2) throw ConfigError("dataset: need at least 2 classes");
  if (spec.resolution < 8) throw ConfigError("dataset: resolution too small");
  Dataset ds;
  ds.spec = spec;
  ds.split = split;
  const int n = split == Split::Train ? spec.train_size
              : split == Split::Val   ? spec.val_size
                                      : spec.test_size;
  const std::uint64_t split_seed = derive_seed(spec.seed, fnv1a(split_name(split)));
  ds.items.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(split_seed, static_cast<std::uint64_t>(i)));
    if (spec.segmentation) {
      ds.items.push_back(gen_segmentation(spec, rng));
    } else {
      // balanced class assignment, order shuffled by the per-item stream
      const int cls = i % spec.num_classes;
      ds.items.push_back(gen_classification(spec, cls, rng));
    }
  }
  return ds;
}

void make_batch(const Dataset& ds, const std::vector<int>& indices, Tensor<float>& images,
                std::vector<int>& targets) {
  if (indices.empty()) throw UsageError("make_batch: empty index list");
  const auto& first = ds.items.front().image;
  const std::int64_t c = first.dim(1), h = first.dim(2), w = first.dim(3);
  images = Tensor<float>::zeros({static_cast<std::int64_t>(indices.size()), c, h, w});
  targets.clear();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= ds.size()) throw UsageError("make_batch: index out of range");
    const Sample& s = ds.items[static_cast<std::size_t>(idx)];
    std::copy(s.image.data.begin(), s.image.data.end(),
              images.data.begin() + static_cast<std::int64_t>(i) * c * h * w);
    targets.insert(targets.end(), s.target.begin(), s.target.end());
  }
}

Sample augment(const Sample& s, bool segmentation, Rng& rng) {
  const std::int64_t ch = s.image.dim(1), res = s.image.dim(2);
  const int max_shift = static_cast<int>(res) / 8;
  const int dy = rng.uniform_int(-max_shift, max_shift);
  const int dx = rng.uniform_int(-max_shift, max_shift);
  const bool mirror = rng.bernoulli(0.5);
  Sample out;
  out.image = Tensor<float>::zeros(s.image.shape);
  auto clamp = [&](std::int64_t v) { return std::max<std::int64_t>(0, std::min(res - 1, v)); };
  for (std::int64_t c = 0; c < ch; ++c)
    for (std::int64_t y = 0; y < res; ++y)
      for (std::int64_t x = 0; x < res; ++x) {
        const std::int64_t sx0 = mirror ? res - 1 - x : x;
        out.image.at4(0, c, y, x) = s.image.at4(0, c, clamp(y + dy), clamp(sx0 + dx));
      }
  if (segmentation) {
    out.target.resize(s.target.size());
    for (std::int64_t y = 0; y < res; ++y)
      for (std::int64_t x = 0; x < res; ++x) {
        const std::int64_t sx0 = mirror ? res - 1 - x : x;
        out.target[static_cast<std::size_t>(y * res + x)] =
            s.target[static_cast<std::size_t>(clamp(y + dy) * res + clamp(sx0 + dx))];
      }
  } else {
    out.target = s.target;
  }
  return out;
}

}  // namespace onas
