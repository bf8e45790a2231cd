#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "semicon/config.hpp"
#include "semicon/model.hpp"

namespace semicon {

struct TraceRow {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double similarity = 0;    // beta-free term, summed over the epoch's batches
  double quantization = 0;  // gamma-free term
  double total = 0;         // beta * similarity + gamma * quantization
};

/// "iteration,epoch,similarity,quantization,total"
std::string format_trace_row(const TraceRow& row);
inline constexpr const char* kTraceHeader = "iteration,epoch,similarity,quantization,total";

struct TrainResult {
  std::unique_ptr<SemiconModel> model;
  CodeDatabase database;  // learned Z with the database labels
  std::vector<TraceRow> trace;
};

using TraceSink = std::function<void(const TraceRow&)>;

/// Alternating optimisation over the database split: each iteration samples
/// Omega, runs `epochs` passes of mini-batch SGD on the relaxed objective
/// against fixed Z, then sweeps Z once with the binarized outputs.
TrainResult train(const RunConfig& cfg, const Dataset& database, const TraceSink& sink = {});

/// Gradient scale applied to the summed batch objective: 1 / (batch rows * |Gamma|).
double loss_normalizer(std::size_t batch_rows, std::size_t database_size);

}  // namespace semicon
