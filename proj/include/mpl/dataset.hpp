#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mpl/tensor.hpp"

namespace mpl {

// Labelled [H x W x 3] images with per-class name token sequences.
struct FewShotDataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // N * H * W * 3, row-major
  std::vector<std::size_t> labels;
  std::vector<std::vector<std::size_t>> class_names;
  std::string split_tag = "all";  // base | new | all

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  std::size_t image_values() const { return height * width * 3; }
  Tensor image(std::size_t i) const;
  std::vector<std::size_t> class_counts() const;

  // Throws DataError on inconsistent sizes or labels >= C.
  void validate() const;
  bool operator==(const FewShotDataset&) const = default;
};

struct SyntheticSpec {
  std::size_t classes = 8;
  std::size_t per_class = 32;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t patch_size = 4;
  std::size_t vocab_size = 64;
  std::size_t name_length = 2;
  // Class-name tokens are drawn from [first_name_token, vocab_size).
  std::size_t first_name_token = 5;
  // Blend factor towards an unrelated pattern (0 keeps the prototypes).
  double prototype_shift = 0.0;
  std::uint64_t shift_seed = 1;

  bool operator==(const SyntheticSpec&) const = default;
};

// One random constant-colour patch pattern per class; samples add Gaussian
// pixel noise and are clipped to [0, 1]. Prototypes and class names depend
// on `seed` only, so shifted variants keep the class names.
FewShotDataset make_synthetic_dataset(const SyntheticSpec& spec);

// Keeps the listed samples in the given order.
FewShotDataset select_samples(const FewShotDataset& ds,
                              std::span<const std::size_t> indices);

// Restricts to `classes` (in the given order) and relabels them 0..k-1.
FewShotDataset subset_classes(const FewShotDataset& ds,
                              std::span<const std::size_t> classes,
                              std::string split_tag);

struct FewShotSplit {
  FewShotDataset train;
  FewShotDataset holdout;
};

// Exactly `shots` samples per class for training (seeded), the rest held
// out. DataError when a class has fewer than `shots` samples.
FewShotSplit split_few_shot(const FewShotDataset& ds, std::size_t shots,
                            std::uint64_t seed);
FewShotDataset sample_few_shot(const FewShotDataset& ds, std::size_t shots,
                               std::uint64_t seed);

// On-disk layout: <dir>/manifest.json and <dir>/images.bin. The binary file
// starts with a 16-byte little-endian header
//   bytes 0-3   magic "MPLD"
//   bytes 4-5   version (1)
//   bytes 6-7   channels (3)
//   bytes 8-11  N
//   bytes 12-13 H
//   bytes 14-15 W
// followed by N*H*W*3 float64 values, row-major (sample, row, col, channel).
void write_dataset(const FewShotDataset& ds, const std::filesystem::path& dir);
FewShotDataset read_dataset(const std::filesystem::path& dir);

}  // namespace mpl
