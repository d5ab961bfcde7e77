#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hopmix/tensor.hpp"

namespace hopmix {

// In-memory labeled image set. Serialized as IMGB (little-endian):
//   "IMGB" | u32 version=1 | u32 count | u16 channels | u16 height |
//   u16 width | u16 num_classes | count*(c*h*w) u8 pixels | count u8 labels
struct Dataset {
  std::uint16_t channels = 0;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint16_t num_classes = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;
  std::string split;  // metadata only, not serialized

  std::size_t count() const { return labels.size(); }
  std::size_t image_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * image_size(), image_size()};
  }
  void validate() const;
};

// K fixed class templates drawn uniformly in [0,1) from a seeded stream, then
// per_class samples per class as clip(template + N(0, sigma), 0, 1) quantized
// to u8. Deterministic in `seed`; samples are stored class-major.
Dataset gen_synthetic(int classes, int per_class, int channels, int height, int width,
                      double noise_sigma, std::uint64_t seed);

void save_imgb(const std::string& path, const Dataset& ds);
Dataset load_imgb(const std::string& path);

// First `head_per_class` samples of each class and the rest, preserving
// order. Used to carve train/val splits out of one generated set.
std::pair<Dataset, Dataset> split_per_class(const Dataset& ds, int head_per_class);

// Per-channel pixel mean/std on the [0,1] scale.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std_dev;
};

NormStats compute_norm_stats(const Dataset& ds);

// (pixel/255 - mean_c) / std_c as a flat f64 image.
std::vector<double> normalize_image(const Dataset& ds, std::size_t index, const NormStats& stats);

}  // namespace hopmix
