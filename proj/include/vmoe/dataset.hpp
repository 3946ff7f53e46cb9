#pragma once

// Image datasets: CIFAR binary batches, seeded synthetic sets, and helpers
// that turn stored uint8 images into model inputs.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vmoe/tensor.hpp"

namespace vmoe {

// Square RGB images stored contiguously as uint8 H x W x 3.
struct Dataset {
  int image_size = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> fine_labels;
  std::vector<int> coarse_labels;  // empty when the source has none
  int num_classes = 0;
  int num_coarse_classes = 0;
  std::string split;

  std::size_t size() const { return fine_labels.size(); }
  std::size_t image_bytes() const { return static_cast<std::size_t>(image_size) * image_size * 3; }
  std::span<const std::uint8_t> image(std::size_t i) const { return {pixels.data() + i * image_bytes(), image_bytes()}; }
  bool has_coarse_labels() const { return !coarse_labels.empty(); }

  Dataset subset(std::span<const std::size_t> indices) const;
};

// Label arrays line up with the images and labels lie in their ranges.
void validate(const Dataset& d);

enum class CifarVariant { kCifar10, kCifar100 };

// One binary batch file: 1 label byte (CIFAR-10) or coarse then fine label
// bytes (CIFAR-100), then 3072 channel-planar pixel bytes per record.
Dataset load_cifar(const std::filesystem::path& file, CifarVariant variant);

// A whole split from the extracted archive directory: data_batch_1..5.bin /
// test_batch.bin for CIFAR-10, train.bin / test.bin for CIFAR-100.
Dataset load_cifar_split(const std::filesystem::path& dir, CifarVariant variant, const std::string& split);

// Serializes in the same layout load_cifar reads.
void write_cifar(const Dataset& d, const std::filesystem::path& file, CifarVariant variant);

struct SyntheticSpec {
  int num_classes = 4;
  int num_superclasses = 2;
  int images_per_class = 50;
  int image_size = 32;
  std::uint64_t seed = 0;
};

// Each super-class owns a hue family; classes inside it differ by stripe
// orientation and a small hue offset. Images carry pixel noise, brightness
// jitter and a random stripe phase. coarse_labels holds the super-class.
Dataset synthetic_dataset(const SyntheticSpec& spec);

Dataset upsample_nearest(const Dataset& d, int image_size);

// Deterministic stratified split: about `fraction` of every class goes to
// the second part.
std::pair<Dataset, Dataset> split_holdout(const Dataset& d, double fraction, std::uint64_t seed);

// At most `per_class` examples of every class, keeping dataset order.
Dataset take_per_class(const Dataset& d, int per_class);

// Pads by `pad` (zeros), crops back at a random offset, flips half the time.
std::vector<std::uint8_t> augment_image(std::span<const std::uint8_t> image, int image_size, int pad,
                                        std::mt19937_64& rng);

// Maps bytes to [-1, 1] as an [S x S x 3] tensor.
template <typename Scalar>
Tensor<Scalar> to_tensor(std::span<const std::uint8_t> image, int image_size) {
  Vector<Scalar> v(static_cast<Eigen::Index>(image.size()));
  for (std::size_t i = 0; i < image.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = static_cast<Scalar>(image[i]) / Scalar(127.5) - Scalar(1);
  }
  return Tensor<Scalar>({image_size, image_size, 3}, std::move(v));
}

}  // namespace vmoe
