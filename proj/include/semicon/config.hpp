#pragma once

#include <cstdint>
#include <string>

#include "semicon/dataset.hpp"
#include "semicon/icon.hpp"
#include "semicon/sem.hpp"

namespace semicon {

struct ModelConfig {
  std::size_t input_channels = 3;
  std::size_t input_size = 32;        // square inputs; features are input_size / 4
  std::size_t extractor_channels = 8; // width of the first extractor block
  std::size_t feature_channels = 16;  // C = C'
  std::size_t bits = 48;
  StageConfig stages;
  IconConfig icon;
  bool icon_enabled = true;

  void validate() const;
};

struct TrainConfig {
  double beta = 1.0;
  double gamma = 200.0;
  std::size_t iterations = 40;
  std::size_t epochs = 30;
  std::size_t sample_size = 240;  // |Omega| cap per iteration
  std::size_t batch_size = 16;
  double lr = 2.5e-4;
  double momentum = 0.91;
  double weight_decay = 1e-4;
  bool soft_constraint = false;

  void validate() const;
};

/// Everything a run depends on besides the code version.
struct RunConfig {
  SyntheticDatasetSpec data;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Line-oriented "key = value" text; '#' starts a comment. Unknown keys,
/// duplicate keys and unparsable values are errors naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Canonical text form listing every key; parse_config round-trips it.
std::string format_config(const RunConfig& cfg);

}  // namespace semicon
