#pragma once

// Differentiable primitives. Every op validates its shapes, computes its
// output eagerly, and records a backward rule on the tape of its inputs.
// Reductions accumulate in double regardless of the storage type.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "semicon/autodiff.hpp"
#include "semicon/parallel.hpp"
#include "semicon/tensor.hpp"

namespace semicon {

/// Closed set of public primitive kinds.
enum class PrimitiveKind {
  kMatmul,
  kPointwiseLinear,
  kGroupedPointwiseLinear,
  kSoftmax,
  kTanh,
  kRelu,
  kHadamard,
  kSignedSqrt,
  kBatchNorm,
  kGlobalAvgPool,
  kResidualAdd,
  kConcatChannels,
  kScale,
};

const char* kind_name(PrimitiveKind kind);

/// Running statistics and hyperparameters of one batch-norm layer.
template <class T>
struct BatchNormState {
  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T{0}), running_var(channels, T{1}) {}
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

template <class T>
struct OpAttrs {
  int axis = -1;               // softmax
  std::size_t groups = 1;      // grouped-pointwise-linear
  double delta = 1e-5;         // signed-sqrt
  double scale = 1.0;          // scale-by-constant
  BatchNormState<T>* bn = nullptr;
  bool training = true;        // batch-norm mode
};

namespace ops {
namespace detail {

[[noreturn]] inline void shape_fail(const char* kind, const std::string& msg) {
  throw ShapeError(std::string(kind) + ": " + msg);
}

template <class T>
Tape<T>& same_tape(const char* kind, std::initializer_list<Var<T>> vars) {
  Tape<T>* t = vars.begin()->tape;
  for (const auto& v : vars) {
    if (v.tape != t || t == nullptr) shape_fail(kind, "inputs live on different tapes");
  }
  return *t;
}

inline Shape with_channels(const Shape& s, std::size_t channels) {
  Shape out = s;
  out[channel_view(s).channel_axis] = channels;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: (m x k) . (k x n) -> (m x n)

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  constexpr const char* kind = "matmul";
  Tape<T>& t = detail::same_tape(kind, {a, b});
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    detail::shape_fail(kind, "cannot multiply " + shape_str(A.shape()) + " by " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  BasicTensor<T> out({m, n});
  parallel_for(m, [&](std::size_t r0, std::size_t r1) {
    std::vector<double> acc(n);
    for (std::size_t i = r0; i < r1; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        const T* brow = B.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += aip * brow[j];
      }
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<T>(acc[j]);
    }
  }, k * n);
  return t.record(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    const auto& A = tp.value(a);
    const auto& B = tp.value(b);
    if (tp.requires_grad(a)) {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0;
          for (std::size_t j = 0; j < n; ++j) s += double(G[i * n + j]) * B[p * n + j];
          ga[i * k + p] += static_cast<T>(s);
        }
    }
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad(b);
      std::vector<double> acc(n);
      for (std::size_t p = 0; p < k; ++p) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) acc[j] += aip * G[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += static_cast<T>(acc[j]);
      }
    }
  }, kind);
}

// ---------------------------------------------------------------------------
// Batched matmul over rank-3 operands: (B x m x k) . (B x k x n), or with
// transpose_b: (B x m x k) . (B x n x k)^T. Internal; used by channel attention.

template <class T>
Var<T> bmm(Var<T> a, Var<T> b, bool transpose_b) {
  constexpr const char* kind = "bmm";
  Tape<T>& t = detail::same_tape(kind, {a, b});
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 3 || B.rank() != 3 || A.dim(0) != B.dim(0) ||
      A.dim(2) != (transpose_b ? B.dim(2) : B.dim(1))) {
    detail::shape_fail(kind, "incompatible operands " + shape_str(A.shape()) + " and " +
                                 shape_str(B.shape()));
  }
  const std::size_t nb = A.dim(0), m = A.dim(1), k = A.dim(2);
  const std::size_t n = transpose_b ? B.dim(1) : B.dim(2);
  // element (p, j) of the right operand viewed as k x n
  auto bidx = [=](std::size_t batch, std::size_t p, std::size_t j) {
    return transpose_b ? batch * n * k + j * k + p : batch * k * n + p * n + j;
  };
  BasicTensor<T> out({nb, m, n});
  parallel_for(nb, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t bt = b0; bt < b1; ++bt)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          T s{};
          for (std::size_t p = 0; p < k; ++p) s += A[bt * m * k + i * k + p] * B[bidx(bt, p, j)];
          out[bt * m * n + i * n + j] = static_cast<T>(s);
        }
  }, m * n * k);
  return t.record(std::move(out), {a, b}, [a, b, nb, m, k, n, bidx](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    const auto& A = tp.value(a);
    const auto& B = tp.value(b);
    const bool need_a = tp.requires_grad(a), need_b = tp.requires_grad(b);
    std::vector<T>* ga = need_a ? &tp.grad(a) : nullptr;
    std::vector<T>* gb = need_b ? &tp.grad(b) : nullptr;
    parallel_for(nb, [&](std::size_t b0, std::size_t b1) {
      for (std::size_t bt = b0; bt < b1; ++bt) {
        if (need_a)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              T s{};
              for (std::size_t j = 0; j < n; ++j) s += G[bt * m * n + i * n + j] * B[bidx(bt, p, j)];
              (*ga)[bt * m * k + i * k + p] += static_cast<T>(s);
            }
        if (need_b)
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) {
              T s{};
              for (std::size_t i = 0; i < m; ++i) s += A[bt * m * k + i * k + p] * G[bt * m * n + i * n + j];
              (*gb)[bidx(bt, p, j)] += static_cast<T>(s);
            }
      }
    }, m * n * k);
  }, kind);
}

// ---------------------------------------------------------------------------
// grouped pointwise linear (1x1 convolution over the channel axis).
// weight: Cout x (Cin / groups); bias optional (Cout).

template <class T>
Var<T> grouped_pointwise_linear(Var<T> x, Var<T> weight, const Var<T>* bias, std::size_t groups) {
  const char* kind = groups == 1 ? "pointwise-linear" : "grouped-pointwise-linear";
  Tape<T>& t = bias ? detail::same_tape(kind, {x, weight, *bias}) : detail::same_tape(kind, {x, weight});
  const auto& X = x.value();
  const auto& W = weight.value();
  const ChannelView v = channel_view(X.shape());
  if (groups == 0 || v.channels % groups != 0) {
    detail::shape_fail(kind, "group count " + std::to_string(groups) + " does not divide " +
                                 std::to_string(v.channels) + " input channels");
  }
  const std::size_t cin_g = v.channels / groups;
  if (W.rank() != 2 || W.dim(1) != cin_g || W.dim(0) % groups != 0) {
    detail::shape_fail(kind, "weight " + shape_str(W.shape()) + " incompatible with input " +
                                 shape_str(X.shape()) + " and " + std::to_string(groups) + " groups");
  }
  const std::size_t cout = W.dim(0), cout_g = cout / groups;
  if (bias && (bias->value().rank() != 1 || bias->value().dim(0) != cout)) {
    detail::shape_fail(kind, "bias " + shape_str(bias->value().shape()) + " vs " +
                                 std::to_string(cout) + " output channels");
  }
  const std::size_t N = v.batch, S = v.spatial, Cin = v.channels;
  BasicTensor<T> out(detail::with_channels(X.shape(), cout));
  const T* bptr = bias ? bias->value().data() : nullptr;
  parallel_for(N, [&](std::size_t n0, std::size_t n1) {
    std::vector<T> acc(S);
    for (std::size_t n = n0; n < n1; ++n)
      for (std::size_t co = 0; co < cout; ++co) {
        const std::size_t g = co / cout_g;
        std::fill(acc.begin(), acc.end(), bptr ? bptr[co] : T{});
        for (std::size_t j = 0; j < cin_g; ++j) {
          const T w = W[co * cin_g + j];
          const T* xs = X.data() + (n * Cin + g * cin_g + j) * S;
          for (std::size_t s = 0; s < S; ++s) acc[s] += w * xs[s];
        }
        T* os = out.data() + (n * cout + co) * S;
        for (std::size_t s = 0; s < S; ++s) os[s] = static_cast<T>(acc[s]);
      }
  }, cout * cin_g * S);
  const bool has_bias = bias != nullptr;
  const Var<T> bvar = has_bias ? *bias : Var<T>{};
  bool needs = x.requires_grad() || weight.requires_grad() || (has_bias && bvar.requires_grad());
  return t.record_if(std::move(out), needs,
      [x, weight, bvar, has_bias, N, S, Cin, cin_g, cout, cout_g](Tape<T>& tp, std::uint32_t self) {
        const auto& G = tp.grad(self);
        const auto& X = tp.value(x);
        const auto& W = tp.value(weight);
        if (tp.requires_grad(x)) {
          auto& gx = tp.grad(x);
          parallel_for(N, [&](std::size_t n0, std::size_t n1) {
            std::vector<T> acc(S);
            for (std::size_t n = n0; n < n1; ++n)
              for (std::size_t ci = 0; ci < Cin; ++ci) {
                const std::size_t g = ci / cin_g, j = ci % cin_g;
                std::fill(acc.begin(), acc.end(), T{});
                for (std::size_t co = g * cout_g; co < (g + 1) * cout_g; ++co) {
                  const T w = W[co * cin_g + j];
                  const T* gs = G.data() + (n * cout + co) * S;
                  for (std::size_t s = 0; s < S; ++s) acc[s] += w * gs[s];
                }
                T* dst = gx.data() + (n * Cin + ci) * S;
                for (std::size_t s = 0; s < S; ++s) dst[s] += static_cast<T>(acc[s]);
              }
          }, Cin * cout_g * S);
        }
        if (tp.requires_grad(weight)) {
          auto& gw = tp.grad(weight);
          parallel_for(cout, [&](std::size_t c0, std::size_t c1) {
            std::vector<T> part(S);
            for (std::size_t co = c0; co < c1; ++co) {
              const std::size_t g = co / cout_g;
              for (std::size_t j = 0; j < cin_g; ++j) {
                std::fill(part.begin(), part.end(), T{});
                for (std::size_t n = 0; n < N; ++n) {
                  const T* gs = G.data() + (n * cout + co) * S;
                  const T* xs = X.data() + (n * Cin + g * cin_g + j) * S;
                  for (std::size_t q = 0; q < S; ++q) part[q] += gs[q] * xs[q];
                }
                double s = 0;
                for (T v : part) s += v;
                gw[co * cin_g + j] += static_cast<T>(s);
              }
            }
          }, N * cin_g * S);
        }
        if (has_bias && tp.requires_grad(bvar)) {
          auto& gb = tp.grad(bvar);
          for (std::size_t co = 0; co < cout; ++co) {
            double s = 0;
            for (std::size_t n = 0; n < N; ++n) {
              const T* gs = G.data() + (n * cout + co) * S;
              for (std::size_t q = 0; q < S; ++q) s += gs[q];
            }
            gb[co] += static_cast<T>(s);
          }
        }
      }, kind);
}

template <class T>
Var<T> pointwise_linear(Var<T> x, Var<T> weight, const Var<T>* bias = nullptr) {
  return grouped_pointwise_linear(x, weight, bias, 1);
}

// ---------------------------------------------------------------------------
// elementwise unary ops

namespace detail {

template <class T, class Fwd, class Deriv>
Var<T> unary(const char* kind, Var<T> x, Fwd fwd, Deriv deriv) {
  Tape<T>& t = *x.tape;
  const auto& X = x.value();
  BasicTensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = static_cast<T>(fwd(double(X[i])));
  return t.record(std::move(out), {x}, [x, deriv](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    const auto& X = tp.value(x);
    const auto& Y = tp.value(self);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < X.size(); ++i)
      gx[i] += static_cast<T>(double(G[i]) * deriv(double(X[i]), double(Y[i])));
  }, kind);
}

}  // namespace detail

template <class T>
Var<T> tanh(Var<T> x) {
  return detail::unary<T>("tanh", x, [](double v) { return std::tanh(v); },
                          [](double, double y) { return 1.0 - y * y; });
}

namespace detail {

// Exact zeros are skipped: they come from upstream relus (a structural zero
// stays zero under small perturbations), and those relus report their own.
template <class T>
void note_zero_kink(Var<T> x) {
  double m = std::numeric_limits<double>::infinity();
  for (T v : x.value().values()) {
    if (v != T{0}) m = std::min(m, std::abs(double(v)));
  }
  x.tape->note_kink_distance(m);
}

}  // namespace detail

template <class T>
Var<T> relu(Var<T> x) {
  detail::note_zero_kink(x);
  return detail::unary<T>("relu", x, [](double v) { return v > 0 ? v : 0.0; },
                          [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

/// x -> sign(x) * sqrt(|x| + delta), with sign(0) = 0. The derivative
/// 1 / (2 sqrt(|x| + delta)) is used everywhere, which at x = 0 equals the
/// one-sided limit 1 / (2 sqrt(delta)).
template <class T>
Var<T> signed_sqrt(Var<T> x, double delta) {
  if (!(delta > 0)) throw InvalidArgument("signed-sqrt: delta must be positive");
  detail::note_zero_kink(x);
  return detail::unary<T>(
      "signed-sqrt", x,
      [delta](double v) { return v == 0 ? 0.0 : (v > 0 ? 1.0 : -1.0) * std::sqrt(std::abs(v) + delta); },
      [delta](double v, double) { return 0.5 / std::sqrt(std::abs(v) + delta); });
}

template <class T>
Var<T> scale(Var<T> x, double c) {
  return detail::unary<T>("scale-by-constant", x, [c](double v) { return c * v; },
                          [c](double, double) { return c; });
}

// ---------------------------------------------------------------------------
// softmax over one axis

template <class T>
Var<T> softmax(Var<T> x, int axis = -1) {
  constexpr const char* kind = "softmax-over-axis";
  Tape<T>& t = *x.tape;
  const auto& X = x.value();
  const int rank = static_cast<int>(X.rank());
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) {
    detail::shape_fail(kind, "axis " + std::to_string(axis) + " out of range for shape " + shape_str(X.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= X.dim(i);
  for (int i = ax + 1; i < rank; ++i) inner *= X.dim(i);
  const std::size_t len = X.dim(ax);
  BasicTensor<T> out(X.shape());
  std::vector<double> e(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = X[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, double(X[base + l * inner]));
      double sum = 0;
      for (std::size_t l = 0; l < len; ++l) sum += (e[l] = std::exp(double(X[base + l * inner]) - mx));
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] = static_cast<T>(e[l] / sum);
    }
  return t.record(std::move(out), {x}, [x, outer, inner, len](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    const auto& Y = tp.value(self);
    auto& gx = tp.grad(x);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0;
        for (std::size_t l = 0; l < len; ++l) dot += double(G[base + l * inner]) * Y[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t i = base + l * inner;
          gx[i] += static_cast<T>(double(Y[i]) * (double(G[i]) - dot));
        }
      }
  }, kind);
}

// ---------------------------------------------------------------------------
// hadamard: same-shape product, or b broadcast over the channel axis of a
// when b has a single channel (an H x W map applied to every channel).

template <class T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  constexpr const char* kind = "hadamard";
  Tape<T>& t = detail::same_tape(kind, {a, b});
  const auto& A = a.value();
  const auto& B = b.value();
  bool broadcast = false;
  if (A.shape() != B.shape()) {
    const ChannelView va = channel_view(A.shape());
    ChannelView vb{};
    bool ok = false;
    if (B.rank() == A.rank()) {
      vb = channel_view(B.shape());
      ok = vb.channels == 1 && vb.batch == va.batch && vb.spatial == va.spatial;
      // spatial extents must match axis by axis
      for (std::size_t i = vb.channel_axis + 1; ok && i < A.rank(); ++i) ok = A.dim(i) == B.dim(i);
    } else if (B.rank() == 2 && A.rank() == 3) {
      ok = B.dim(0) == A.dim(1) && B.dim(1) == A.dim(2);
    }
    if (!ok) {
      detail::shape_fail(kind, "cannot broadcast " + shape_str(B.shape()) + " over " + shape_str(A.shape()));
    }
    broadcast = true;
  }
  const ChannelView v = channel_view(A.shape());
  const std::size_t N = v.batch, C = v.channels, S = v.spatial;
  BasicTensor<T> out(A.shape());
  if (!broadcast) {
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  } else {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < S; ++s)
          out[(n * C + c) * S + s] = A[(n * C + c) * S + s] * B[n * S + s];
  }
  return t.record(std::move(out), {a, b}, [a, b, broadcast, N, C, S](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    const auto& A = tp.value(a);
    const auto& B = tp.value(b);
    if (tp.requires_grad(a)) {
      auto& ga = tp.grad(a);
      if (!broadcast) {
        for (std::size_t i = 0; i < A.size(); ++i) ga[i] += G[i] * B[i];
      } else {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t s = 0; s < S; ++s)
              ga[(n * C + c) * S + s] += G[(n * C + c) * S + s] * B[n * S + s];
      }
    }
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad(b);
      if (!broadcast) {
        for (std::size_t i = 0; i < A.size(); ++i) gb[i] += G[i] * A[i];
      } else {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t s = 0; s < S; ++s) {
            double acc = 0;
            for (std::size_t c = 0; c < C; ++c) acc += double(G[(n * C + c) * S + s]) * A[(n * C + c) * S + s];
            gb[n * S + s] += static_cast<T>(acc);
          }
      }
    }
  }, kind);
}

// ---------------------------------------------------------------------------
// batch norm over (batch, spatial) per channel

template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, bool training) {
  constexpr const char* kind = "batch-norm";
  Tape<T>& t = detail::same_tape(kind, {x, gamma, beta});
  const auto& X = x.value();
  const ChannelView v = channel_view(X.shape());
  const std::size_t N = v.batch, C = v.channels, S = v.spatial;
  if (gamma.value().size() != C || beta.value().size() != C || state.running_mean.size() != C ||
      state.running_var.size() != C) {
    detail::shape_fail(kind, "per-channel parameters do not match " + std::to_string(C) +
                                 " channels of input " + shape_str(X.shape()));
  }
  const std::size_t M = N * S;
  if (training && M < 2) detail::shape_fail(kind, "training mode needs at least 2 values per channel");
  std::vector<double> mean(C), inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    double mu, var;
    if (training) {
      double s = 0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t q = 0; q < S; ++q) s += X[(n * C + c) * S + q];
      mu = s / double(M);
      double ss = 0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t q = 0; q < S; ++q) {
          const double d = X[(n * C + c) * S + q] - mu;
          ss += d * d;
        }
      var = ss / double(M);
      const double mom = state.momentum;
      state.running_mean[c] = static_cast<T>((1 - mom) * state.running_mean[c] + mom * mu);
      state.running_var[c] =
          static_cast<T>((1 - mom) * state.running_var[c] + mom * var * double(M) / double(M - 1));
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    mean[c] = mu;
    inv_std[c] = 1.0 / std::sqrt(var + state.eps);
  }
  const auto& Gm = gamma.value();
  const auto& Bt = beta.value();
  BasicTensor<T> out(X.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double a = double(Gm[c]) * inv_std[c];
      const double b = double(Bt[c]) - a * mean[c];
      for (std::size_t q = 0; q < S; ++q) {
        const std::size_t i = (n * C + c) * S + q;
        out[i] = static_cast<T>(a * X[i] + b);
      }
    }
  return t.record(std::move(out), {x, gamma, beta},
      [x, gamma, beta, training, mean, inv_std, N, C, S](Tape<T>& tp, std::uint32_t self) {
        const auto& G = tp.grad(self);
        const auto& X = tp.value(x);
        const auto& Gm = tp.value(gamma);
        const double M = double(N * S);
        for (std::size_t c = 0; c < C; ++c) {
          double sum_g = 0, sum_gx = 0;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t q = 0; q < S; ++q) {
              const std::size_t i = (n * C + c) * S + q;
              const double xhat = (X[i] - mean[c]) * inv_std[c];
              sum_g += G[i];
              sum_gx += double(G[i]) * xhat;
            }
          if (tp.requires_grad(gamma)) tp.grad(gamma)[c] += static_cast<T>(sum_gx);
          if (tp.requires_grad(beta)) tp.grad(beta)[c] += static_cast<T>(sum_g);
          if (tp.requires_grad(x)) {
            auto& gx = tp.grad(x);
            const double a = double(Gm[c]) * inv_std[c];
            for (std::size_t n = 0; n < N; ++n)
              for (std::size_t q = 0; q < S; ++q) {
                const std::size_t i = (n * C + c) * S + q;
                if (training) {
                  const double xhat = (X[i] - mean[c]) * inv_std[c];
                  gx[i] += static_cast<T>(a * (double(G[i]) - sum_g / M - xhat * sum_gx / M));
                } else {
                  gx[i] += static_cast<T>(a * G[i]);
                }
              }
          }
        }
      }, kind);
}

// ---------------------------------------------------------------------------
// global average pool: [N,]C x H x W -> [N,]C

template <class T>
Var<T> global_avg_pool(Var<T> x) {
  constexpr const char* kind = "global-average-pool";
  Tape<T>& t = *x.tape;
  const auto& X = x.value();
  if (X.rank() < 3) detail::shape_fail(kind, "expected C x H x W or N x C x H x W, got " + shape_str(X.shape()));
  const ChannelView v = channel_view(X.shape());
  const std::size_t N = v.batch, C = v.channels, S = v.spatial;
  BasicTensor<T> out(X.rank() == 4 ? Shape{N, C} : Shape{C});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double s = 0;
    for (std::size_t q = 0; q < S; ++q) s += X[nc * S + q];
    out[nc] = static_cast<T>(s / double(S));
  }
  return t.record(std::move(out), {x}, [x, N, C, S](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    auto& gx = tp.grad(x);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const T g = static_cast<T>(double(G[nc]) / double(S));
      for (std::size_t q = 0; q < S; ++q) gx[nc * S + q] += g;
    }
  }, kind);
}

// ---------------------------------------------------------------------------

template <class T>
Var<T> residual_add(Var<T> a, Var<T> b) {
  constexpr const char* kind = "residual-add";
  Tape<T>& t = detail::same_tape(kind, {a, b});
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) {
    detail::shape_fail(kind, "operand shapes " + shape_str(A.shape()) + " and " + shape_str(B.shape()) + " differ");
  }
  BasicTensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    for (Var<T> v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto& gv = tp.grad(v);
      for (std::size_t i = 0; i < G.size(); ++i) gv[i] += G[i];
    }
  }, kind);
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  constexpr const char* kind = "concat-along-channel";
  if (parts.empty()) detail::shape_fail(kind, "no inputs");
  Tape<T>& t = *parts[0].tape;
  const Shape& s0 = parts[0].shape();
  const ChannelView v0 = channel_view(s0);
  std::size_t total = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p.tape != &t) detail::shape_fail(kind, "inputs live on different tapes");
    const Shape& s = p.shape();
    Shape a = s, b = s0;
    a[v0.channel_axis] = 0;
    b[v0.channel_axis] = 0;
    if (s.size() != s0.size() || a != b) {
      detail::shape_fail(kind, "input " + shape_str(s) + " does not match " + shape_str(s0) + " off the channel axis");
    }
    total += channel_view(s).channels;
    needs = needs || p.requires_grad();
  }
  const std::size_t N = v0.batch, S = v0.spatial;
  BasicTensor<T> out(detail::with_channels(s0, total));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = channel_view(p.shape()).channels;
    offsets.push_back(off);
    const auto& P = p.value();
    for (std::size_t n = 0; n < N; ++n)
      std::copy_n(P.data() + n * c * S, c * S, out.data() + (n * total + off) * S);
    off += c;
  }
  return t.record_if(std::move(out), needs, [parts, offsets, N, S, total](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!tp.requires_grad(parts[k])) continue;
      auto& gp = tp.grad(parts[k]);
      const std::size_t c = gp.size() / (N * S);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < c * S; ++i) gp[n * c * S + i] += G[(n * total + offsets[k]) * S + i];
    }
  }, kind);
}

// ---------------------------------------------------------------------------
// internal helpers (not part of the public primitive set)

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tape<T>& t = *x.tape;
  BasicTensor<T> out = x.value().reshaped(std::move(shape));
  return t.record(std::move(out), {x}, [x](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i];
  }, "reshape");
}

/// Output channel i is input channel order[i].
template <class T>
Var<T> permute_channels(Var<T> x, const std::vector<std::size_t>& order) {
  constexpr const char* kind = "permute-channels";
  Tape<T>& t = *x.tape;
  const auto& X = x.value();
  const ChannelView v = channel_view(X.shape());
  if (order.size() != v.channels) {
    detail::shape_fail(kind, "permutation of length " + std::to_string(order.size()) + " for " +
                                 std::to_string(v.channels) + " channels");
  }
  std::vector<bool> seen(v.channels, false);
  for (std::size_t o : order) {
    if (o >= v.channels || seen[o]) detail::shape_fail(kind, "order is not a permutation");
    seen[o] = true;
  }
  const std::size_t N = v.batch, C = v.channels, S = v.spatial;
  BasicTensor<T> out(X.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      std::copy_n(X.data() + (n * C + order[c]) * S, S, out.data() + (n * C + c) * S);
  return t.record(std::move(out), {x}, [x, order, N, C, S](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    auto& gx = tp.grad(x);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t q = 0; q < S; ++q) gx[(n * C + order[c]) * S + q] += G[(n * C + c) * S + q];
  }, kind);
}

template <class T>
Var<T> sum(Var<T> x) {
  Tape<T>& t = *x.tape;
  double s = 0;
  for (T v : x.value().values()) s += v;
  return t.record(BasicTensor<T>({1}, static_cast<T>(s)), {x}, [x](Tape<T>& tp, std::uint32_t self) {
    const T g = tp.grad(self)[0];
    for (auto& gv : tp.grad(x)) gv += g;
  }, "sum");
}

template <class T>
Var<T> sum_squares(Var<T> x) {
  Tape<T>& t = *x.tape;
  double s = 0;
  for (T v : x.value().values()) s += double(v) * v;
  return t.record(BasicTensor<T>({1}, static_cast<T>(s)), {x}, [x](Tape<T>& tp, std::uint32_t self) {
    const double g = tp.grad(self)[0];
    const auto& X = tp.value(x);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < X.size(); ++i) gx[i] += static_cast<T>(2.0 * g * X[i]);
  }, "sum-squares");
}

/// Adds a constant tensor of the same shape.
template <class T>
Var<T> add_constant(Var<T> x, const BasicTensor<T>& c) {
  if (x.shape() != c.shape()) {
    detail::shape_fail("add-constant", shape_str(c.shape()) + " vs " + shape_str(x.shape()));
  }
  BasicTensor<T> out(x.shape());
  const auto& X = x.value();
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] + c[i];
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i];
  }, "add-constant");
}

/// 3x3 convolution, stride 1, zero padding 1. Used only by the feature
/// extractor. weight: Cout x Cin x 3 x 3, bias: Cout.
template <class T>
Var<T> conv3x3(Var<T> x, Var<T> weight, Var<T> bias) {
  constexpr const char* kind = "conv3x3";
  Tape<T>& t = detail::same_tape(kind, {x, weight, bias});
  const auto& X = x.value();
  const auto& W = weight.value();
  if (X.rank() != 4 || W.rank() != 4 || W.dim(1) != X.dim(1) || W.dim(2) != 3 || W.dim(3) != 3 ||
      bias.value().size() != W.dim(0)) {
    detail::shape_fail(kind, "input " + shape_str(X.shape()) + " incompatible with weight " + shape_str(W.shape()));
  }
  const std::size_t N = X.dim(0), Cin = X.dim(1), H = X.dim(2), Wd = X.dim(3), Cout = W.dim(0);
  const std::size_t HW = H * Wd;
  BasicTensor<T> out({N, Cout, H, Wd});
  const auto& Bs = bias.value();
  // out[y][x] += w[ky][kx] * in[y + ky - 1][x + kx - 1]
  parallel_for(N * Cout, [&](std::size_t j0, std::size_t j1) {
    std::vector<T> acc(HW);
    for (std::size_t job = j0; job < j1; ++job) {
      const std::size_t n = job / Cout, co = job % Cout;
      std::fill(acc.begin(), acc.end(), Bs[co]);
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* in = X.data() + (n * Cin + ci) * HW;
        const T* w = W.data() + (co * Cin + ci) * 9;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const T wv = w[ky * 3 + kx];
            const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? H - 1 : H;
            const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? Wd - 1 : Wd;
            for (std::size_t y = y0; y < y1; ++y) {
              const T* src = in + (y + ky - 1) * Wd + (kx - 1);
              T* dst = acc.data() + y * Wd;
              for (std::size_t xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
            }
          }
      }
      T* o = out.data() + (n * Cout + co) * HW;
      std::copy(acc.begin(), acc.end(), o);
    }
  }, Cin * 9 * HW);
  return t.record(std::move(out), {x, weight, bias},
      [x, weight, bias, N, Cin, Cout, H, Wd, HW](Tape<T>& tp, std::uint32_t self) {
        const auto& G = tp.grad(self);
        const auto& X = tp.value(x);
        const auto& W = tp.value(weight);
        if (tp.requires_grad(bias)) {
          auto& gb = tp.grad(bias);
          for (std::size_t co = 0; co < Cout; ++co) {
            double s = 0;
            for (std::size_t n = 0; n < N; ++n)
              for (std::size_t i = 0; i < HW; ++i) s += G[(n * Cout + co) * HW + i];
            gb[co] += static_cast<T>(s);
          }
        }
        if (tp.requires_grad(weight)) {
          auto& gw = tp.grad(weight);
          parallel_for(Cout * Cin, [&](std::size_t j0, std::size_t j1) {
            std::vector<T> part(Wd);
            for (std::size_t job = j0; job < j1; ++job) {
              const std::size_t co = job / Cin, ci = job % Cin;
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? H - 1 : H;
                  const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? Wd - 1 : Wd;
                  std::fill(part.begin(), part.end(), T{});
                  for (std::size_t n = 0; n < N; ++n) {
                    const T* g = G.data() + (n * Cout + co) * HW;
                    const T* in = X.data() + (n * Cin + ci) * HW;
                    for (std::size_t y = y0; y < y1; ++y) {
                      const T* src = in + (y + ky - 1) * Wd + (kx - 1);
                      const T* gr = g + y * Wd;
                      for (std::size_t xx = x0; xx < x1; ++xx) part[xx] += gr[xx] * src[xx];
                    }
                  }
                  double s = 0;
                  for (T v : part) s += v;
                  gw[(co * Cin + ci) * 9 + ky * 3 + kx] += static_cast<T>(s);
                }
            }
          }, N * 9 * HW);
        }
        if (tp.requires_grad(x)) {
          auto& gx = tp.grad(x);
          parallel_for(N * Cin, [&](std::size_t j0, std::size_t j1) {
            std::vector<T> acc(HW);
            for (std::size_t job = j0; job < j1; ++job) {
              const std::size_t n = job / Cin, ci = job % Cin;
              std::fill(acc.begin(), acc.end(), T{});
              for (std::size_t co = 0; co < Cout; ++co) {
                const T* g = G.data() + (n * Cout + co) * HW;
                const T* w = W.data() + (co * Cin + ci) * 9;
                for (int ky = 0; ky < 3; ++ky)
                  for (int kx = 0; kx < 3; ++kx) {
                    const T wv = w[ky * 3 + kx];
                    const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? H - 1 : H;
                    const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? Wd - 1 : Wd;
                    for (std::size_t y = y0; y < y1; ++y) {
                      T* dst = acc.data() + (y + ky - 1) * Wd + (kx - 1);
                      const T* gr = g + y * Wd;
                      for (std::size_t xx = x0; xx < x1; ++xx) dst[xx] += wv * gr[xx];
                    }
                  }
              }
              T* dst = gx.data() + (n * Cin + ci) * HW;
              for (std::size_t i = 0; i < HW; ++i) dst[i] += static_cast<T>(acc[i]);
            }
          }, Cout * 9 * HW);
        }
      }, kind);
}

/// 2x2 max pooling with stride 2 (even spatial extents).
template <class T>
Var<T> max_pool2(Var<T> x) {
  constexpr const char* kind = "max-pool2";
  Tape<T>& t = *x.tape;
  const auto& X = x.value();
  if (X.rank() != 4 || X.dim(2) % 2 || X.dim(3) % 2) {
    detail::shape_fail(kind, "expected N x C x H x W with even H, W; got " + shape_str(X.shape()));
  }
  const std::size_t NC = X.dim(0) * X.dim(1), H = X.dim(2), W = X.dim(3), Ho = H / 2, Wo = W / 2;
  BasicTensor<T> out({X.dim(0), X.dim(1), Ho, Wo});
  std::vector<std::uint32_t> argmax(out.size());
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < NC; ++p)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        std::size_t best = p * H * W + 2 * y * W + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = p * H * W + (2 * y + dy) * W + 2 * xx + dx;
            if (X[i] > X[best]) best = i;
          }
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = p * H * W + (2 * y + dy) * W + 2 * xx + dx;
            if (i != best) gap = std::min(gap, double(X[best]) - double(X[i]));
          }
        const std::size_t o = p * Ho * Wo + y * Wo + xx;
        out[o] = X[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  t.note_kink_distance(gap);
  return t.record(std::move(out), {x}, [x, argmax](Tape<T>& tp, std::uint32_t self) {
    const auto& G = tp.grad(self);
    auto& gx = tp.grad(x);
    for (std::size_t o = 0; o < G.size(); ++o) gx[argmax[o]] += G[o];
  }, kind);
}

// ---------------------------------------------------------------------------
// Generic dispatcher over the public primitive set.
//   matmul:                 {a, b}
//   pointwise-linear:       {x, W} or {x, W, bias}
//   grouped-pointwise-...:  {x, W} or {x, W, bias}; attrs.groups
//   softmax-over-axis:      {x}; attrs.axis
//   tanh, relu:             {x}
//   hadamard:               {a, b}
//   signed-sqrt:            {x}; attrs.delta
//   batch-norm:             {x, gamma, beta}; attrs.bn, attrs.training
//   global-average-pool:    {x}
//   residual-add:           {a, b}
//   concat-along-channel:   {x1, x2, ...}
//   scale-by-constant:      {x}; attrs.scale

template <class T>
Var<T> forward(PrimitiveKind kind, std::span<const Var<T>> in, const OpAttrs<T>& attrs = {}) {
  auto arity = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi) {
      throw ShapeError(std::string(kind_name(kind)) + ": expected " + std::to_string(lo) +
                       (lo == hi ? "" : ".." + std::to_string(hi)) + " inputs, got " +
                       std::to_string(in.size()));
    }
  };
  switch (kind) {
    case PrimitiveKind::kMatmul: arity(2, 2); return matmul(in[0], in[1]);
    case PrimitiveKind::kPointwiseLinear:
      arity(2, 3);
      return grouped_pointwise_linear(in[0], in[1], in.size() == 3 ? &in[2] : nullptr, 1);
    case PrimitiveKind::kGroupedPointwiseLinear:
      arity(2, 3);
      return grouped_pointwise_linear(in[0], in[1], in.size() == 3 ? &in[2] : nullptr, attrs.groups);
    case PrimitiveKind::kSoftmax: arity(1, 1); return softmax(in[0], attrs.axis);
    case PrimitiveKind::kTanh: arity(1, 1); return tanh(in[0]);
    case PrimitiveKind::kRelu: arity(1, 1); return relu(in[0]);
    case PrimitiveKind::kHadamard: arity(2, 2); return hadamard(in[0], in[1]);
    case PrimitiveKind::kSignedSqrt: arity(1, 1); return signed_sqrt(in[0], attrs.delta);
    case PrimitiveKind::kBatchNorm:
      arity(3, 3);
      if (!attrs.bn) throw InvalidArgument("batch-norm: missing running-statistics state");
      return batch_norm(in[0], in[1], in[2], *attrs.bn, attrs.training);
    case PrimitiveKind::kGlobalAvgPool: arity(1, 1); return global_avg_pool(in[0]);
    case PrimitiveKind::kResidualAdd: arity(2, 2); return residual_add(in[0], in[1]);
    case PrimitiveKind::kConcatChannels:
      arity(1, SIZE_MAX);
      return concat_channels(std::vector<Var<T>>(in.begin(), in.end()));
    case PrimitiveKind::kScale: arity(1, 1); return scale(in[0], attrs.scale);
  }
  throw InvalidArgument("unknown primitive kind");
}

}  // namespace ops
}  // namespace semicon
