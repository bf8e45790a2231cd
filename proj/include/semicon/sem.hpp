#pragma once

// Suppression-enhancing mask attention for the local branch.
//
// Stage 1 derives a guidance tensor from the backbone activation and a
// single-channel attention map from it. Every later stage reweights the
// previous guidance by an order-reversing affine transform of the softmax
// of the previous map: the most attended cell is damped, the rest lifted.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "semicon/layers.hpp"

namespace semicon {

struct StageConfig {
  std::size_t stages = 3;      // m
  double alpha = 0.3;          // suppression exponent
  double std_floor = 1e-12;    // guards a zero standard deviation
  bool suppress = true;        // false: later stages reuse the previous guidance unchanged

  void validate() const {
    if (stages < 1) throw ConfigError("stage count must be >= 1");
    if (!(alpha > 0 && alpha <= 1)) throw ConfigError("alpha must lie in (0, 1]");
    if (!(std_floor > 0)) throw ConfigError("std_floor must be positive");
  }
};

namespace detail {

/// Samples and cells of a single-channel map: [H,W], [1,H,W] or [N,1,H,W].
inline std::pair<std::size_t, std::size_t> map_layout(const Shape& s, const char* kind) {
  if (s.size() == 2) return {1, s[0] * s[1]};
  if (s.size() >= 3) {
    const ChannelView v = channel_view(s);
    if (v.channels == 1) return {v.batch, v.spatial};
  }
  throw ShapeError(std::string(kind) + ": expected a single-channel H x W map, got " + shape_str(s));
}

}  // namespace detail

/// Per sample: p = softmax over all H*W cells; out_k = 1 - (p_k - mean(p)) /
/// max(std(p), std_floor)^alpha with the population standard deviation.
/// The output cell-mean is 1 and cell ordering is reversed. Maps whose
/// deviation is at or below std_floor are treated as constant (all ones,
/// zero gradient).
template <class T>
Var<T> sem_transform(Var<T> map, double alpha, double std_floor = 1e-12) {
  constexpr const char* kind = "sem-transform";
  const auto& X = map.value();
  const auto [samples, cells] = detail::map_layout(X.shape(), kind);
  if (cells == 0) throw ShapeError("sem-transform: empty map");

  BasicTensor<T> out(X.shape());
  // cached per-sample softmax and statistics for the backward rule
  std::vector<double> probs(samples * cells);
  std::vector<double> mean(samples), stdev(samples), denom(samples);
  for (std::size_t n = 0; n < samples; ++n) {
    const T* x = X.data() + n * cells;
    double* p = probs.data() + n * cells;
    double mx = x[0];
    for (std::size_t k = 1; k < cells; ++k) mx = std::max(mx, double(x[k]));
    double z = 0;
    for (std::size_t k = 0; k < cells; ++k) z += (p[k] = std::exp(double(x[k]) - mx));
    double mu = 0;
    for (std::size_t k = 0; k < cells; ++k) mu += (p[k] /= z);
    mu /= double(cells);
    double var = 0;
    for (std::size_t k = 0; k < cells; ++k) var += (p[k] - mu) * (p[k] - mu);
    var /= double(cells);
    const double sd = std::sqrt(var);
    const double d = std::pow(std::max(sd, std_floor), alpha);
    mean[n] = mu;
    stdev[n] = sd;
    denom[n] = d;
    // at or below the floor the map counts as constant: no cell deviates
    for (std::size_t k = 0; k < cells; ++k) {
      out[n * cells + k] = sd > std_floor ? static_cast<T>(1.0 - (p[k] - mu) / d) : T{1};
    }
  }

  return map.tape->record(std::move(out), {map},
      [map, samples, cells, probs, mean, stdev, denom, alpha, std_floor](Tape<T>& tp, std::uint32_t self) {
        const auto& G = tp.grad(self);
        auto& gx = tp.grad(map);
        std::vector<double> gp(cells);
        for (std::size_t n = 0; n < samples; ++n) {
          const double* p = probs.data() + n * cells;
          const T* g = G.data() + n * cells;
          const double d = denom[n], mu = mean[n], sd = stdev[n];
          if (!(sd > std_floor)) continue;
          double gbar = 0, gdev = 0;
          for (std::size_t k = 0; k < cells; ++k) {
            gbar += g[k];
            gdev += double(g[k]) * (p[k] - mu);
          }
          gbar /= double(cells);
          // d out_k / d p_j = -(delta_kj - 1/n) / D + (p_k - mu) / D^2 * dD/dp_j,
          // dD/dp_j = alpha sd^(alpha-1) (p_j - mu) / (n sd).
          const double coef = gdev / (d * d) * alpha * std::pow(sd, alpha - 1) / (double(cells) * sd);
          for (std::size_t j = 0; j < cells; ++j) gp[j] = -(double(g[j]) - gbar) / d + coef * (p[j] - mu);
          double dot = 0;
          for (std::size_t j = 0; j < cells; ++j) dot += gp[j] * p[j];
          for (std::size_t j = 0; j < cells; ++j) gx[n * cells + j] += static_cast<T>(p[j] * (gp[j] - dot));
        }
      }, kind);
}

/// T' = M (.) T with the single-channel map broadcast over channels.
template <class T>
Var<T> apply_mask(Var<T> map, Var<T> activation) {
  return ops::hadamard(activation, map);
}

/// P_i = sem_transform(M_{i-1}) (.) P_{i-1}.
template <class T>
Var<T> next_guidance(Var<T> prev_guidance, Var<T> prev_map, const StageConfig& cfg) {
  return ops::hadamard(prev_guidance, sem_transform(prev_map, cfg.alpha, cfg.std_floor));
}

template <class T>
struct StageOutputs {
  std::vector<Var<T>> guidance;  // P_1..P_m
  std::vector<Var<T>> maps;      // M_1..M_m
  std::vector<Var<T>> masked;    // T'_1..T'_m
  std::size_t sem_calls = 0;
};

/// Guidance network plus one 1x1 convolution (C -> 1) per stage.
template <class T>
class SemAttention {
 public:
  SemAttention() = default;

  /// Default guidance network (channel-preserving transform net).
  SemAttention(ParamStore<T>& store, const std::string& name, std::size_t channels,
               const StageConfig& cfg, Rng& rng)
      : SemAttention(store, name, channels, cfg, rng,
                     TransformNet<T>(store, name + ".guidance", channels, rng)) {}

  SemAttention(ParamStore<T>& store, const std::string& name, std::size_t channels,
               const StageConfig& cfg, Rng& rng, TransformNet<T> guidance)
      : cfg_(cfg), guidance_(std::move(guidance)) {
    cfg_.validate();
    for (std::size_t i = 0; i < cfg_.stages; ++i) {
      stage_maps_.emplace_back(store, name + ".map" + std::to_string(i + 1), channels, 1, rng);
    }
  }

  const StageConfig& config() const { return cfg_; }
  std::size_t stages() const { return cfg_.stages; }
  Pointwise<T>& stage_map(std::size_t i) { return stage_maps_.at(i); }

  /// P_1 = phi_att(T). The guidance network must preserve spatial extents.
  Var<T> init_guidance(Tape<T>& tape, Var<T> activation, bool training) const {
    Var<T> p = guidance_(tape, activation, training);
    const Shape& a = activation.shape();
    const Shape& b = p.shape();
    const std::size_t ax = channel_view(a).channel_axis;
    if (a.size() != b.size() || !std::equal(a.begin() + ax + 1, a.end(), b.begin() + ax + 1)) {
      throw ConfigError("guidance network changed spatial shape " + shape_str(a) + " -> " + shape_str(b));
    }
    return p;
  }

  /// M_i = phi_i(P_i), stage index zero-based.
  Var<T> attention_map(Tape<T>& tape, Var<T> guidance, std::size_t stage) const {
    return stage_maps_.at(stage)(tape, guidance);
  }

  StageOutputs<T> run_stages(Tape<T>& tape, Var<T> activation, bool training) const {
    StageOutputs<T> out;
    Var<T> p = init_guidance(tape, activation, training);
    for (std::size_t i = 0; i < cfg_.stages; ++i) {
      if (i > 0 && cfg_.suppress) {
        p = next_guidance(p, out.maps.back(), cfg_);
        ++out.sem_calls;
      }
      Var<T> m = attention_map(tape, p, i);
      out.guidance.push_back(p);
      out.maps.push_back(m);
      out.masked.push_back(apply_mask(m, activation));
    }
    return out;
  }

 private:
  StageConfig cfg_;
  TransformNet<T> guidance_;
  std::vector<Pointwise<T>> stage_maps_;
};

}  // namespace semicon
