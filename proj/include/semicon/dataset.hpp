#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semicon/tensor.hpp"

namespace semicon {

/// Parameters of the synthetic fine-grained image set. Every class shares a
/// central "object" blob and a smooth background; classes differ in where
/// their high-amplitude part blobs sit and in the channel signature of each
/// part. Samples add i.i.d. Gaussian noise to the class prototype.
struct SyntheticDatasetSpec {
  std::size_t classes = 8;
  std::size_t samples_per_class = 30;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t parts_per_class = 3;
  double part_amplitude = 1.0;
  double noise_sigma = 0.5;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Labelled image-like samples, N x C x H x W.
struct Dataset {
  Tensor images;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  /// Rows `indices` stacked into a batch tensor.
  Tensor gather(const std::vector<std::size_t>& indices) const;
};

struct DatasetSplit {
  Dataset database;  // training / indexed points
  Dataset query;     // held-out queries
};

/// Deterministic in (spec, seed); 80/20 database/query split per class.
DatasetSplit generate_synthetic(const SyntheticDatasetSpec& spec);

/// Class prototypes (noise-free), classes x C x H x W.
Tensor class_prototypes(const SyntheticDatasetSpec& spec);

inline constexpr char kDatasetMagic[] = "SMCD";
inline constexpr std::uint16_t kDatasetVersion = 1;

/// "SMCD", u16 version, u64 count, u32 channels, u32 height, u32 width,
/// then per sample: u32 label + C*H*W f32 values.
std::vector<char> encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::vector<char>& bytes);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

}  // namespace semicon
