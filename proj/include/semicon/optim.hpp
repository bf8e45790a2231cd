#pragma once

#include <span>

#include "semicon/autodiff.hpp"

namespace semicon {

struct SgdOptions {
  double lr = 2.5e-4;
  double momentum = 0.91;
  double weight_decay = 1e-4;
};

/// Momentum SGD:
///   buf   <- momentum * buf + grad + weight_decay * param
///   param <- param - lr * buf
/// Gradients are cleared afterwards. Every parameter must carry a gradient
/// from the preceding backward pass.
template <class T>
void sgd_step(std::span<Parameter<T>* const> params, const SgdOptions& opt) {
  for (const Parameter<T>* p : params) {
    if (!p->has_grad) throw StateError("sgd_step: parameter '" + p->name + "' has no gradient");
  }
  for (Parameter<T>* p : params) {
    auto& w = p->value.buffer();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double buf = opt.momentum * double(p->momentum[i]) + double(p->grad[i]) +
                         opt.weight_decay * double(w[i]);
      p->momentum[i] = static_cast<T>(buf);
      w[i] = static_cast<T>(double(w[i]) - opt.lr * buf);
    }
    p->zero_grad();
  }
}

}  // namespace semicon
