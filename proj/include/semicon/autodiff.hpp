#pragma once

#include <cstddef>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "semicon/error.hpp"
#include "semicon/tensor.hpp"

namespace semicon {

/// Trainable tensor with its gradient and momentum buffers.
template <class T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, BasicTensor<T> v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.size(), T{0}),
        momentum(value.size(), T{0}) {}

  std::string name;
  BasicTensor<T> value;
  std::vector<T> grad;
  std::vector<T> momentum;
  bool has_grad = false;

  void zero_grad() {
    std::fill(grad.begin(), grad.end(), T{0});
    has_grad = false;
  }
};

template <class T>
class Tape;

/// Handle to a value recorded on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const BasicTensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

/// Define-by-run reverse-mode tape. Node creation order is a topological
/// order, so backward walks the node list once in reverse.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Constant input; never receives a gradient.
  Var<T> constant(BasicTensor<T> value) {
    check_finite(value, "constant");
    return push(std::move(value), false, nullptr, nullptr);
  }

  /// Differentiable leaf that is not a parameter (used by gradient checks).
  Var<T> variable(BasicTensor<T> value) {
    check_finite(value, "variable");
    return push(std::move(value), true, nullptr, nullptr);
  }

  /// Leaf bound to a parameter; backward accumulates into param.grad.
  Var<T> param(Parameter<T>& p) {
    for (const auto& [pp, id] : params_) {
      if (pp == &p) return Var<T>{this, id};
    }
    check_finite(p.value, "parameter " + p.name);
    Var<T> v = push(p.value, true, nullptr, &p);
    params_.emplace_back(&p, v.id);
    return v;
  }

  /// Records an op output. requires_grad is inherited from the inputs.
  Var<T> record(BasicTensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward,
                const char* kind) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || requires_grad(in);
    return record_if(std::move(value), needs, std::move(backward), kind);
  }

  Var<T> record_if(BasicTensor<T> value, bool needs_grad, Backward backward, const char* kind) {
    check_finite(value, kind);
    return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : nullptr, nullptr);
  }

  const BasicTensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const BasicTensor<T>& value(std::uint32_t id) const { return nodes_.at(id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient buffer of a node, allocated zero on first access.
  std::vector<T>& grad(std::uint32_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T{0});
    return n.grad;
  }
  std::vector<T>& grad(Var<T> v) { return grad(v.id); }
  bool has_grad(Var<T> v) const { return !nodes_.at(v.id).grad.empty(); }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Every parameter recorded on this tape
  /// ends with has_grad set; parameters the loss does not reach get zeros.
  void backward(Var<T> loss) {
    if (backward_done_) {
      throw StateError("backward called twice on the same tape; run a new forward first");
    }
    if (loss.tape != this) throw InvalidArgument("backward: loss belongs to another tape");
    const BasicTensor<T>& lv = value(loss);
    if (lv.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
    }
    backward_done_ = true;
    grad(loss)[0] = T{1};
    visited_ = 0;
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      ++visited_;
      if (n.backward) n.backward(*this, id);
    }
    for (auto& [p, id] : params_) {
      Node& n = nodes_[id];
      if (!n.grad.empty()) {
        for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += n.grad[i];
      }
      p->has_grad = true;
    }
  }

  /// Number of nodes whose backward rule ran in the last sweep.
  std::size_t visited() const noexcept { return visited_; }

  /// Smallest distance of any input of a non-smooth op to its kink (relu and
  /// signed-sqrt at 0, max-pool ties); infinity when there was none.
  double kink_distance() const noexcept { return kink_distance_; }
  void note_kink_distance(double d) noexcept { kink_distance_ = std::min(kink_distance_, d); }

  void reset() {
    kink_distance_ = std::numeric_limits<double>::infinity();
    nodes_.clear();
    params_.clear();
    backward_done_ = false;
    visited_ = 0;
  }

 private:
  struct Node {
    BasicTensor<T> value;
    std::vector<T> grad;
    Backward backward;
    bool requires_grad = false;
  };

  static void check_finite(const BasicTensor<T>& v, const std::string& kind) {
    if (!v.all_finite()) throw NumericError(kind + ": non-finite value");
  }

  Var<T> push(BasicTensor<T> value, bool needs_grad, Backward backward, Parameter<T>*) {
    if (backward_done_) {
      throw StateError("tape already consumed by backward; start a new tape for the next forward");
    }
    nodes_.push_back(Node{std::move(value), {}, std::move(backward), needs_grad});
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<Parameter<T>*, std::uint32_t>> params_;
  bool backward_done_ = false;
  std::size_t visited_ = 0;
  double kink_distance_ = std::numeric_limits<double>::infinity();
};

}  // namespace semicon
