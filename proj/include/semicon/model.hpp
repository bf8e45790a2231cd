#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "semicon/checkpoint.hpp"
#include "semicon/config.hpp"
#include "semicon/dataset.hpp"
#include "semicon/hashing.hpp"
#include "semicon/icon.hpp"
#include "semicon/sem.hpp"

namespace semicon {

/// Stand-in backbone: two [3x3 conv -> batch-norm -> relu -> 2x2 max pool]
/// blocks, so a S x S input becomes C x S/4 x S/4.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(ParamStore<float>& store, const ModelConfig& cfg, Rng& rng);
  Var<float> operator()(Tape<float>& tape, Var<float> images, bool training) const;

 private:
  struct Block {
    Parameter<float>* weight = nullptr;
    Parameter<float>* bias = nullptr;
    BatchNorm<float> bn;
  };
  Block block(ParamStore<float>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Var<float> run(Tape<float>& tape, const Block& b, Var<float> x, bool training) const;

  std::size_t in_channels_ = 0;
  std::size_t in_size_ = 0;
  Block first_, second_;
};

struct ModelOutputs {
  Var<float> codes;                 // v = [v_global; v_local_1..m], pre-tanh, B x k
  std::vector<Var<float>> maps;     // attention maps M_1..M_m
  IconCounters icon_counters;
};

/// extractor -> { phi (global), SEM stages -> phi' (local) } -> ICON on each
/// of the m + 1 tensors -> global average pool -> m + 1 linear encoders.
class SemiconModel {
 public:
  SemiconModel(const ModelConfig& cfg, std::uint64_t seed);

  SemiconModel(const SemiconModel&) = delete;
  SemiconModel& operator=(const SemiconModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const CodeLayout& layout() const { return layout_; }

  ModelOutputs forward(Tape<float>& tape, Var<float> images, bool training) const;

  /// Inference-mode codes (binarized) for every sample, in batches.
  CodeMatrix encode(const Dataset& data, std::size_t batch = 64) const;

  std::vector<Parameter<float>*> parameters() { return store_.parameters(); }

  /// Parameters, batch-norm statistics and the architecture record.
  std::vector<NamedTensor> state() const;
  static std::unique_ptr<SemiconModel> from_state(const std::vector<NamedTensor>& records);

 private:
  ModelConfig cfg_;
  CodeLayout layout_;
  mutable ParamStore<float> store_;
  FeatureExtractor extractor_;
  TransformNet<float> global_net_;
  TransformNet<float> local_net_;
  SemAttention<float> sem_;
  std::vector<IconBlock<float>> icon_;  // [global, local_1..m]
  HashHead<float> head_;
};

}  // namespace semicon
