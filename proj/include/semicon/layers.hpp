#pragma once

#include <cmath>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "semicon/autodiff.hpp"
#include "semicon/ops.hpp"
#include "semicon/rng.hpp"

namespace semicon {

/// Owns every parameter and batch-norm state of a model under unique names.
/// Addresses are stable for the store's lifetime.
template <class T>
class ParamStore {
 public:
  struct BnEntry {
    std::string name;
    BatchNormState<T> state;
  };

  Parameter<T>& add(const std::string& name, BasicTensor<T> value) {
    for (const auto& p : params_) {
      if (p.name == name) throw InvalidArgument("duplicate parameter name '" + name + "'");
    }
    params_.emplace_back(name, std::move(value));
    return params_.back();
  }

  BatchNormState<T>& add_bn(const std::string& name, std::size_t channels) {
    bns_.push_back(BnEntry{name, BatchNormState<T>(channels)});
    return bns_.back().state;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }
  std::deque<Parameter<T>>& raw_parameters() { return params_; }
  std::deque<BnEntry>& batch_norms() { return bns_; }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

 private:
  std::deque<Parameter<T>> params_;
  std::deque<BnEntry> bns_;
};

/// Uniform(-bound, bound) with bound = 1/sqrt(fan_in).
template <class T>
BasicTensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0) {
  BasicTensor<T> t(std::move(shape));
  const double bound = gain / std::sqrt(double(fan_in));
  for (auto& v : t.buffer()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// 1x1 convolution (channel-space linear map), optionally grouped.
template <class T>
class Pointwise {
 public:
  Pointwise() = default;
  Pointwise(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
            Rng& rng, bool bias = true, std::size_t groups = 1)
      : groups_(groups) {
    if (groups == 0 || in % groups || out % groups) {
      throw ConfigError(name + ": group count " + std::to_string(groups) + " must divide " +
                        std::to_string(in) + " and " + std::to_string(out));
    }
    weight_ = &store.add(name + ".weight", init_uniform<T>({out, in / groups}, in / groups, rng));
    if (bias) bias_ = &store.add(name + ".bias", init_uniform<T>({out}, in / groups, rng));
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    Var<T> w = tape.param(*weight_);
    if (bias_) {
      Var<T> b = tape.param(*bias_);
      return ops::grouped_pointwise_linear(x, w, &b, groups_);
    }
    return ops::grouped_pointwise_linear<T>(x, w, nullptr, groups_);
  }

  Parameter<T>& weight() { return *weight_; }
  Parameter<T>* bias() { return bias_; }
  std::size_t groups() const { return groups_; }

 private:
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
  std::size_t groups_ = 1;
};

template <class T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& name, std::size_t channels)
      : gamma_(&store.add(name + ".gamma", BasicTensor<T>::ones({channels}))),
        beta_(&store.add(name + ".beta", BasicTensor<T>::zeros({channels}))),
        state_(&store.add_bn(name, channels)) {}

  Var<T> operator()(Tape<T>& tape, Var<T> x, bool training) const {
    return ops::batch_norm(x, tape.param(*gamma_), tape.param(*beta_), *state_, training);
  }

  BatchNormState<T>& state() { return *state_; }

 private:
  Parameter<T>* gamma_ = nullptr;
  Parameter<T>* beta_ = nullptr;
  BatchNormState<T>* state_ = nullptr;
};

/// Channel-preserving transform network: pointwise -> batch-norm -> relu ->
/// pointwise. The identity variant has no parameters.
template <class T>
class TransformNet {
 public:
  TransformNet() = default;
  TransformNet(ParamStore<T>& store, const std::string& name, std::size_t channels, Rng& rng)
      : identity_(false),
        in_(store, name + ".pw1", channels, channels, rng),
        bn_(store, name + ".bn", channels),
        out_(store, name + ".pw2", channels, channels, rng) {}

  static TransformNet identity() { return TransformNet(); }
  bool is_identity() const { return identity_; }

  Var<T> operator()(Tape<T>& tape, Var<T> x, bool training) const {
    if (identity_) return x;
    Var<T> h = in_(tape, x);
    h = ops::relu(bn_(tape, h, training));
    return out_(tape, h);
  }

 private:
  bool identity_ = true;
  Pointwise<T> in_;
  BatchNorm<T> bn_;
  Pointwise<T> out_;
};

}  // namespace semicon
