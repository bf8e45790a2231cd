#include "semicon/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "semicon/ops.hpp"
#include "semicon/optim.hpp"

namespace semicon {

namespace {

enum SeedTag : std::uint64_t { kModelSeed = 1, kCodeSeed = 2, kSampleSeed = 3, kShuffleSeed = 4 };

SimilarityMatrix rows_of(const SimilarityMatrix& s, const std::vector<std::size_t>& rows) {
  SimilarityMatrix out;
  out.queries = rows.size();
  out.points = s.points;
  out.data.reserve(rows.size() * s.points);
  for (std::size_t r : rows) {
    out.data.insert(out.data.end(), s.data.begin() + static_cast<std::ptrdiff_t>(r * s.points),
                    s.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * s.points));
  }
  return out;
}

}  // namespace

std::string format_trace_row(const TraceRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g", row.iteration, row.epoch, row.similarity,
                row.quantization, row.total);
  return buf;
}

double loss_normalizer(std::size_t batch_rows, std::size_t database_size) {
  return 1.0 / (double(batch_rows) * double(database_size));
}

TrainResult train(const RunConfig& cfg, const Dataset& database, const TraceSink& sink) {
  cfg.validate();
  const TrainConfig& tc = cfg.train;
  const std::size_t n = database.size();
  if (n == 0) throw InvalidArgument("train: empty database");
  if (database.images.rank() != 4 || database.images.dim(0) != n) {
    throw ShapeError("train: database images " + shape_str(database.images.shape()) + " vs " +
                     std::to_string(n) + " labels");
  }

  TrainResult result;
  result.model = std::make_unique<SemiconModel>(cfg.model, mix_seed(cfg.seed, kModelSeed));
  SemiconModel& model = *result.model;
  const std::size_t k = model.layout().bits;
  CodeMatrix z = random_codes(n, k, mix_seed(cfg.seed, kCodeSeed));
  const std::vector<Parameter<float>*> params = model.parameters();
  const SgdOptions sgd{tc.lr, tc.momentum, tc.weight_decay};

  for (std::size_t it = 0; it < tc.iterations; ++it) {
    const std::size_t q = std::min(n, tc.sample_size);
    const std::vector<std::size_t> omega = sample_queries(n, q, mix_seed(mix_seed(cfg.seed, kSampleSeed), it));
    std::vector<std::uint32_t> omega_labels;
    for (std::size_t j : omega) omega_labels.push_back(database.labels[j]);
    const SimilarityMatrix s = similarity(omega_labels, database.labels);
    const double w = positive_pair_weight(s, tc.soft_constraint);

    Tensor relaxed({q, k});  // latest V row for each sampled query
    for (std::size_t ep = 0; ep < tc.epochs; ++ep) {
      const std::uint64_t shuffle_seed = mix_seed(mix_seed(mix_seed(cfg.seed, kShuffleSeed), it), ep);
      const std::vector<std::size_t> order = sample_queries(q, q, shuffle_seed);
      TraceRow row{it, ep, 0, 0, 0};
      for (std::size_t start = 0, batch = 0; start < q; start += tc.batch_size, ++batch) {
        const std::size_t end = std::min(q, start + tc.batch_size);
        std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<std::size_t> ids;
        for (std::size_t r : rows) ids.push_back(omega[r]);
        try {
          Tape<float> tape;
          Var<float> images = tape.constant(database.gather(ids));
          Var<float> v = ops::tanh(model.forward(tape, images, true).codes);
          const LossTerms<float> terms =
              hash_loss(v, z, rows_of(s, rows), std::span<const std::size_t>(ids), tc.beta, tc.gamma, w);
          const double total = tc.beta * terms.similarity + tc.gamma * terms.quantization;
          if (!std::isfinite(total)) throw NumericError("loss is not finite");
          tape.backward(ops::scale(terms.total, loss_normalizer(rows.size(), n)));
          sgd_step<float>(params, sgd);
          for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy_n(v.value().data() + i * k, k, relaxed.data() + rows[i] * k);
          }
          row.similarity += terms.similarity;
          row.quantization += terms.quantization;
          row.total += total;
        } catch (const NumericError& e) {
          throw NumericError("train: non-finite loss at iteration " + std::to_string(it) + ", epoch " +
                             std::to_string(ep) + ", batch " + std::to_string(batch) + " (seed " +
                             std::to_string(cfg.seed) + ", batch seed " + std::to_string(shuffle_seed) +
                             "): " + e.what());
        }
      }
      result.trace.push_back(row);
      if (sink) sink(row);
    }
    update_database_codes(binarize_rows(relaxed), z, s, omega, tc.beta, tc.gamma, w);
  }
  result.database.codes = std::move(z);
  result.database.labels = database.labels;
  return result;
}

}  // namespace semicon
