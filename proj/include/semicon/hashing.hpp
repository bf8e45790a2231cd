#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semicon/layers.hpp"

namespace semicon {

/// Bit budget of the multi-level code u = [global; local_1; ...; local_m].
struct CodeLayout {
  std::size_t bits = 0;
  std::size_t global_len = 0;
  std::vector<std::size_t> local_lens;

  std::size_t levels() const { return local_lens.size() + 1; }
  /// Offset of level l (0 = global) inside the concatenated code.
  std::size_t offset(std::size_t level) const;
  std::size_t length(std::size_t level) const { return level == 0 ? global_len : local_lens.at(level - 1); }
};

/// Each local code gets floor(k / 2m) bits; the global code takes the rest.
CodeLayout code_layout(std::size_t bits, std::size_t stages);

/// Dense matrix over {-1, +1}.
struct CodeMatrix {
  std::size_t rows = 0;
  std::size_t bits = 0;
  std::vector<std::int8_t> data;

  CodeMatrix() = default;
  CodeMatrix(std::size_t r, std::size_t k, std::int8_t fill = 1) : rows(r), bits(k), data(r * k, fill) {}

  std::int8_t& at(std::size_t r, std::size_t b) { return data[r * bits + b]; }
  std::int8_t at(std::size_t r, std::size_t b) const { return data[r * bits + b]; }
  std::span<const std::int8_t> row(std::size_t r) const { return {data.data() + r * bits, bits}; }
  std::span<std::int8_t> row(std::size_t r) { return {data.data() + r * bits, bits}; }

  friend bool operator==(const CodeMatrix&, const CodeMatrix&) = default;
};

/// Learned database codes Z with the labels of the points they stand for.
struct CodeDatabase {
  CodeMatrix codes;
  std::vector<std::uint32_t> labels;
};

/// Pairwise supervision S over {-1, +1}: +1 for same class.
struct SimilarityMatrix {
  std::size_t queries = 0;
  std::size_t points = 0;
  std::vector<std::int8_t> data;

  std::int8_t at(std::size_t i, std::size_t j) const { return data[i * points + j]; }
};

SimilarityMatrix similarity(std::span<const std::uint32_t> query_labels,
                            std::span<const std::uint32_t> point_labels);

/// sign with sign(0) = +1.
std::vector<std::int8_t> binarize(std::span<const float> v);
CodeMatrix binarize_rows(const Tensor& v);

/// Random +/-1 codes (cold start of the database codes).
CodeMatrix random_codes(std::size_t rows, std::size_t bits, std::uint64_t seed);

/// Multiplier on squared residuals of S = +1 pairs. 1 unless the optional
/// imbalance weighting is enabled, in which case it is the ratio of
/// dissimilar to similar pairs.
double positive_pair_weight(const SimilarityMatrix& s, bool soft_constraint);

struct HashObjective {
  double similarity = 0;    // sum over (i, j) of w_ij (u_i . z_j - k S_ij)^2
  double quantization = 0;  // sum over i of |z_{omega_i} - u_i|^2
  double total(double beta, double gamma) const { return beta * similarity + gamma * quantization; }
};

/// Discrete objective for binary query codes U (|Omega| x k) against the
/// database codes. omega[i] is the database row of query i.
HashObjective code_objective(const CodeMatrix& u, const CodeMatrix& z, const SimilarityMatrix& s,
                             std::span<const std::size_t> omega, double positive_weight = 1.0);

struct CodeUpdateStats {
  double before = 0;
  double after = 0;
  std::size_t flips = 0;
};

/// One sweep of bit-wise coordinate descent on Z: bit column by bit column,
/// each z_jb takes the sign minimising beta * similarity + gamma *
/// quantization with everything else fixed (ties keep the current bit).
/// The objective never increases.
CodeUpdateStats update_database_codes(const CodeMatrix& u, CodeMatrix& z, const SimilarityMatrix& s,
                                      std::span<const std::size_t> omega, double beta, double gamma,
                                      double positive_weight = 1.0);

/// Uniform sample of n distinct indices from [0, population), in draw order.
std::vector<std::size_t> sample_queries(std::size_t population, std::size_t n, std::uint64_t seed);

/// m + 1 bias-free linear encoders from pooled features to code segments.
template <class T>
class HashHead {
 public:
  HashHead() = default;
  HashHead(ParamStore<T>& store, const std::string& name, std::size_t features,
           const CodeLayout& layout, Rng& rng)
      : layout_(layout) {
    for (std::size_t l = 0; l < layout.levels(); ++l) {
      const std::string level = l == 0 ? "global" : "local" + std::to_string(l);
      encoders_.emplace_back(store, name + "." + level, features, layout.length(l), rng, false);
    }
  }

  const CodeLayout& layout() const { return layout_; }
  Pointwise<T>& encoder(std::size_t level) { return encoders_.at(level); }

  /// v = [W_global x_global; W_local_1 x_local_1; ...] as [B, k].
  Var<T> project(Tape<T>& tape, Var<T> global, const std::vector<Var<T>>& locals) const {
    if (locals.size() + 1 != encoders_.size()) {
      throw ShapeError("project: expected " + std::to_string(encoders_.size() - 1) + " local features, got " +
                       std::to_string(locals.size()));
    }
    std::vector<Var<T>> parts{encoders_[0](tape, global)};
    for (std::size_t i = 0; i < locals.size(); ++i) parts.push_back(encoders_[i + 1](tape, locals[i]));
    return ops::concat_channels(parts);
  }

 private:
  CodeLayout layout_;
  std::vector<Pointwise<T>> encoders_;
};

template <class T>
struct LossTerms {
  Var<T> total;
  double similarity = 0;
  double quantization = 0;
};

/// beta * sum_ij w_ij (V_i . z_j - k S_ij)^2 + gamma * sum_i |z_{omega_i} - V_i|^2
/// for relaxed codes V (|Omega| x k, tanh already applied). S rows follow V.
template <class T>
LossTerms<T> hash_loss(Var<T> relaxed, const CodeMatrix& z, const SimilarityMatrix& s,
                       std::span<const std::size_t> omega, double beta, double gamma,
                       double positive_weight = 1.0) {
  const Shape& vs = relaxed.shape();
  if (vs.size() != 2 || vs[1] != z.bits) {
    throw ShapeError("hash loss: relaxed codes " + shape_str(vs) + " vs " + std::to_string(z.bits) + "-bit database");
  }
  const std::size_t q = vs[0], p = z.rows, k = z.bits;
  if (s.queries != q || s.points != p || omega.size() != q) {
    throw ShapeError("hash loss: similarity " + std::to_string(s.queries) + "x" + std::to_string(s.points) +
                     " / omega " + std::to_string(omega.size()) + " do not match " + std::to_string(q) +
                     " queries and " + std::to_string(p) + " database points");
  }
  for (std::size_t j : omega) {
    if (j >= p) throw InvalidArgument("hash loss: query index " + std::to_string(j) + " has no database counterpart");
  }
  Tape<T>& tape = *relaxed.tape;
  BasicTensor<T> zt({k, p});
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t b = 0; b < k; ++b) zt[b * p + j] = z.at(j, b);
  BasicTensor<T> neg_target({q, p});
  BasicTensor<T> pair_w({q, p}, T{1});
  bool weighted = positive_weight != 1.0;
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      neg_target[i * p + j] = static_cast<T>(-double(k) * s.at(i, j));
      if (s.at(i, j) > 0) pair_w[i * p + j] = static_cast<T>(std::sqrt(positive_weight));
    }
  BasicTensor<T> zq({q, k});
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t b = 0; b < k; ++b) zq[i * k + b] = z.at(omega[i], b);

  Var<T> inner = ops::matmul(relaxed, tape.constant(std::move(zt)));
  Var<T> resid = ops::add_constant(inner, neg_target);
  if (weighted) resid = ops::hadamard(resid, tape.constant(std::move(pair_w)));
  Var<T> sim = ops::sum_squares(resid);
  Var<T> quant = ops::sum_squares(ops::add_constant(ops::scale(relaxed, -1.0), zq));
  LossTerms<T> out;
  out.similarity = sim.value()[0];
  out.quantization = quant.value()[0];
  out.total = ops::residual_add(ops::scale(sim, beta), ops::scale(quant, gamma));
  return out;
}

}  // namespace semicon
