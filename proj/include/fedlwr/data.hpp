#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "fedlwr/tensor.hpp"

namespace fedlwr {

// image is [1,H,W]; mask is [1,H,W] with values in {0,1}.
struct Sample {
  Tensor image;
  Tensor mask;

  bool operator==(const Sample&) const = default;
};

// Per-client acquisition characteristics. The image of a sample is
//   gain * (base + texture) + bias + N(0, noise_sigma^2)
// where base is a soft rendering of the mask and texture a sinusoid.
struct DomainSpec {
  double gain = 1.0;
  double bias = 0.0;
  double noise_sigma = 0.0;
  int blob_count_min = 1;
  int blob_count_max = 2;
  double blob_radius_min = 2.0;
  double blob_radius_max = 4.0;
  double texture_freq = 2.0;  // cycles per image

  bool operator==(const DomainSpec&) const = default;
};

// Peak value of the texture term before gain.
inline constexpr double kTextureAmplitude = 0.1;

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  bool operator==(const SplitRatios&) const = default;
};

enum class Split { train, val, test };

// All samples of one client plus disjoint index lists describing the split.
struct DatasetBundle {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Sample> samples;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> val_index;
  std::vector<std::size_t> test_index;
  DomainSpec domain;
  SplitRatios ratios;

  std::vector<Sample> split(Split which) const;

  bool operator==(const DatasetBundle&) const = default;
};

// Pixel values are rounded to float32 so that the bundle survives the
// on-disk format unchanged.
DatasetBundle generate_client_dataset(const DomainSpec& spec, std::size_t n, std::size_t height,
                                      std::size_t width, std::uint64_t seed, const SplitRatios& ratios = {});

// Named multi-client benchmarks. "shift4" has four clients with distinct
// gain, bias, noise and texture frequency.
std::vector<DomainSpec> benchmark_domains(std::string_view name);

// Little-endian layout:
//   "FLWRDS1\0" | u32 version | u32 count | u32 H | u32 W |
//   count x (H*W float32 image, H*W uint8 mask) |
//   u64 footer length | JSON footer (domain, ratios, split indices)
inline constexpr char kDatasetMagic[8] = {'F', 'L', 'W', 'R', 'D', 'S', '1', '\0'};
inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& path);
DatasetBundle load_dataset(const std::filesystem::path& path);

// Stacks sample images / masks into a [b,1,H,W] batch.
Tensor stack_images(std::span<const Sample> samples);
Tensor stack_masks(std::span<const Sample> samples);

}  // namespace fedlwr
