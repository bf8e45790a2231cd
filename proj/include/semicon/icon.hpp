#pragma once

// Interactive channel transformation: channels act as tokens (each flattened
// over its H' x W' cells). Step one attends within N contiguous portions of
// width d = C'/N; the channels at equal position across portions are then
// regrouped into d portions of width N for step two; the original channel
// order is restored at the end. Attention cost per step scales with the
// portion width squared instead of C'^2.

#include <cmath>
#include <string>
#include <vector>

#include "semicon/layers.hpp"

namespace semicon {

struct IconConfig {
  std::size_t portions = 4;      // N
  double delta = 1e-5;           // signed-sqrt bias
  bool group_projection = true;  // grouped Q/K/V projections (N groups, then d)

  void validate(std::size_t channels) const {
    if (portions == 0 || channels % portions != 0) {
      throw ConfigError("ICON portion count " + std::to_string(portions) + " must divide " +
                        std::to_string(channels) + " channels");
    }
    if (!(delta > 0)) throw ConfigError("ICON delta must be positive");
  }
};

/// A group of channels with the indices they occupied in the full tensor.
template <class T>
struct BasicPortion {
  BasicTensor<T> channels;  // width x H' x W'
  std::vector<std::size_t> origin;
};
using Portion = BasicPortion<float>;

/// Output channel p of the regrouped layout reads input channel order[p].
/// Regrouped portion i (width `portions`) stacks channel i of every input
/// portion: position i * portions + a <- channel a * width + i.
inline std::vector<std::size_t> recombine_order(std::size_t portions, std::size_t width) {
  std::vector<std::size_t> order(portions * width);
  for (std::size_t i = 0; i < width; ++i)
    for (std::size_t a = 0; a < portions; ++a) order[i * portions + a] = a * width + i;
  return order;
}

inline std::vector<std::size_t> inverse_order(const std::vector<std::size_t>& order) {
  std::vector<std::size_t> inv(order.size());
  for (std::size_t p = 0; p < order.size(); ++p) inv.at(order[p]) = p;
  return inv;
}

/// Contiguous split of a C' x H' x W' tensor into `portions` equal groups.
template <class T>
std::vector<BasicPortion<T>> split_channels(const BasicTensor<T>& g, std::size_t portions) {
  if (g.rank() != 3) throw ShapeError("split_channels: expected C' x H' x W', got " + shape_str(g.shape()));
  const std::size_t C = g.dim(0), S = g.dim(1) * g.dim(2);
  if (portions == 0 || C % portions) {
    throw ConfigError("split_channels: " + std::to_string(portions) + " portions do not divide " +
                      std::to_string(C) + " channels");
  }
  const std::size_t d = C / portions;
  std::vector<BasicPortion<T>> out;
  for (std::size_t i = 0; i < portions; ++i) {
    BasicPortion<T> p{BasicTensor<T>({d, g.dim(1), g.dim(2)}), {}};
    std::copy_n(g.data() + i * d * S, d * S, p.channels.data());
    for (std::size_t j = 0; j < d; ++j) p.origin.push_back(i * d + j);
    out.push_back(std::move(p));
  }
  return out;
}

/// N portions of width d -> d portions of width N; portion i holds channel i
/// of each input portion in input order.
template <class T>
std::vector<BasicPortion<T>> recombine(const std::vector<BasicPortion<T>>& in) {
  if (in.empty()) throw ShapeError("recombine: no portions");
  const Shape& s0 = in[0].channels.shape();
  for (const auto& p : in) {
    if (p.channels.shape() != s0 || p.origin.size() != s0[0]) {
      throw ShapeError("recombine: portion width mismatch (" + shape_str(p.channels.shape()) +
                       " vs " + shape_str(s0) + ")");
    }
  }
  const std::size_t n = in.size(), d = s0[0], S = s0[1] * s0[2];
  std::vector<BasicPortion<T>> out;
  for (std::size_t i = 0; i < d; ++i) {
    BasicPortion<T> p{BasicTensor<T>({n, s0[1], s0[2]}), {}};
    for (std::size_t a = 0; a < n; ++a) {
      std::copy_n(in[a].channels.data() + i * S, S, p.channels.data() + a * S);
      p.origin.push_back(in[a].origin[i]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// Writes every channel back to its origin index.
template <class T>
BasicTensor<T> restore_order(const std::vector<BasicPortion<T>>& portions) {
  if (portions.empty()) throw ShapeError("restore_order: no portions");
  const Shape& s0 = portions[0].channels.shape();
  std::size_t total = 0;
  for (const auto& p : portions) {
    if (p.channels.rank() != 3 || p.channels.dim(1) != s0[1] || p.channels.dim(2) != s0[2] ||
        p.origin.size() != p.channels.dim(0)) {
      throw ShapeError("restore_order: inconsistent portion " + shape_str(p.channels.shape()));
    }
    total += p.origin.size();
  }
  const std::size_t S = s0[1] * s0[2];
  BasicTensor<T> out({total, s0[1], s0[2]});
  std::vector<bool> seen(total, false);
  for (const auto& p : portions) {
    for (std::size_t j = 0; j < p.origin.size(); ++j) {
      const std::size_t o = p.origin[j];
      if (o >= total) throw InvalidArgument("restore_order: origin index " + std::to_string(o) + " out of range");
      if (seen[o]) throw InvalidArgument("restore_order: duplicate origin index " + std::to_string(o));
      seen[o] = true;
      std::copy_n(p.channels.data() + j * S, S, out.data() + o * S);
    }
  }
  return out;
}

template <class T>
struct AttentionResult {
  Var<T> output;
  Var<T> weights;  // [B * portions, width, width]
};

/// Scaled dot-product attention among the channel tokens of each portion.
/// q, k, v: [B,] C' x H' x W' projections holding `portions` contiguous
/// portions. Returns A.V per portion where
/// A = softmax_row(signed_sqrt(Q K^T / sqrt(width), delta)).
template <class T>
AttentionResult<T> portion_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t portions, double delta) {
  const Shape shape = q.shape();
  const ChannelView cv = channel_view(shape);
  if (cv.channels % portions) throw ShapeError("portion_attention: portions do not divide channels");
  const std::size_t width = cv.channels / portions;
  const Shape tokens{cv.batch * portions, width, cv.spatial};
  Var<T> qt = ops::reshape(q, tokens);
  Var<T> kt = ops::reshape(k, tokens);
  Var<T> vt = ops::reshape(v, tokens);
  Var<T> scores = ops::scale(ops::bmm(qt, kt, true), 1.0 / std::sqrt(double(width)));
  Var<T> attn = ops::softmax(ops::signed_sqrt(scores, delta), -1);
  return {ops::reshape(ops::bmm(attn, vt, false), shape), attn};
}

/// Query/key/value projections of one attention step.
template <class T>
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(ParamStore<T>& store, const std::string& name, std::size_t channels,
                   std::size_t portions, bool grouped, double delta, Rng& rng)
      : portions_(portions), delta_(delta) {
    const std::size_t g = grouped ? portions : 1;
    q_ = Pointwise<T>(store, name + ".q", channels, channels, rng, false, g);
    k_ = Pointwise<T>(store, name + ".k", channels, channels, rng, false, g);
    v_ = Pointwise<T>(store, name + ".v", channels, channels, rng, false, g);
  }

  AttentionResult<T> operator()(Tape<T>& tape, Var<T> x) const {
    return portion_attention(q_(tape, x), k_(tape, x), v_(tape, x), portions_, delta_);
  }

  Pointwise<T>& q() { return q_; }
  Pointwise<T>& k() { return k_; }
  Pointwise<T>& v() { return v_; }
  std::size_t portions() const { return portions_; }

 private:
  std::size_t portions_ = 1;
  double delta_ = 1e-5;
  Pointwise<T> q_, k_, v_;
};

/// Token-pair score counts of one forward, per sample.
struct IconCounters {
  std::size_t step1_pairs = 0;
  std::size_t step2_pairs = 0;
};

/// Two-step interactive channel transformation with residuals, BN + ReLU
/// between the steps, and order restoration.
template <class T>
class IconBlock {
 public:
  IconBlock() = default;
  IconBlock(ParamStore<T>& store, const std::string& name, std::size_t channels,
            const IconConfig& cfg, Rng& rng)
      : cfg_(cfg), channels_(channels) {
    cfg_.validate(channels);
    width_ = channels / cfg_.portions;
    step1_ = ChannelAttention<T>(store, name + ".step1", channels, cfg_.portions, cfg_.group_projection, cfg_.delta, rng);
    bn_ = BatchNorm<T>(store, name + ".bn", channels);
    step2_ = ChannelAttention<T>(store, name + ".step2", channels, width_, cfg_.group_projection, cfg_.delta, rng);
    order_ = recombine_order(cfg_.portions, width_);
    inverse_ = inverse_order(order_);
  }

  /// counters, when given, receives the per-sample token-pair score counts
  /// read off the attention weight shapes.
  Var<T> operator()(Tape<T>& tape, Var<T> g, bool training, IconCounters* counters = nullptr) const {
    if (channel_view(g.shape()).channels != channels_) {
      throw ShapeError("ICON: expected " + std::to_string(channels_) + " channels, got " + shape_str(g.shape()));
    }
    const std::size_t batch = channel_view(g.shape()).batch;
    AttentionResult<T> a1 = step1_(tape, g);
    Var<T> x1 = ops::residual_add(g, a1.output);
    Var<T> h = ops::relu(bn_(tape, x1, training));
    Var<T> r = ops::permute_channels(h, order_);
    AttentionResult<T> a2 = step2_(tape, r);
    Var<T> x2 = ops::residual_add(r, a2.output);
    if (counters) {
      counters->step1_pairs = a1.weights.value().size() / batch;
      counters->step2_pairs = a2.weights.value().size() / batch;
    }
    return ops::permute_channels(x2, inverse_);
  }

  const IconConfig& config() const { return cfg_; }
  std::size_t width() const { return width_; }
  ChannelAttention<T>& step1() { return step1_; }
  ChannelAttention<T>& step2() { return step2_; }

 private:
  IconConfig cfg_;
  std::size_t channels_ = 0;
  std::size_t width_ = 0;
  ChannelAttention<T> step1_;
  BatchNorm<T> bn_;
  ChannelAttention<T> step2_;
  std::vector<std::size_t> order_, inverse_;
};

}  // namespace semicon
